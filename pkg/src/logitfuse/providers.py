"""Per-step logit providers.

Three kinds share one interface: byte-level n-gram models (cheap,
deterministic stand-ins for real LMs), scripted providers that replay a
fixed sequence of logit vectors (tests), and an HTTP client speaking the
logit wire protocol. A matching HTTP server exposes any in-process
provider over that protocol.

Wire protocol (JSON over HTTP, UTF-8):
    GET  /v1/metadata          -> {"vocab_size": int, "fingerprint": str|null, "name": str}
    POST /v1/logits            body {"token_ids": [int, ...]}
                               -> {"logits": [float, ...]} of exactly vocab_size numbers
Masked entries travel as the sentinel -1e30 (JSON has no -Infinity);
values at or below the mask threshold (default -1e29) map back to -inf.
Errors: 400 malformed body, 409 vocab mismatch, 503 model loading.
"""

from __future__ import annotations

import json
import os
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse, parse_qs

import numpy as np
import requests

from .core import LogitVector, VocabSpec
from .errors import (
    EmptyCorpusError,
    MalformedMetadataError,
    OutOfScriptError,
    ProviderUnavailableError,
    VocabMismatchError,
)

BYTE_VOCAB = VocabSpec(size=256)
MASK_SENTINEL = -1e30
MASK_THRESHOLD = -1e29
NGRAM_FORMAT_VERSION = 1
DEFAULT_TIMEOUT_S = 30.0
DEFAULT_RETRIES = 2


class Provider:
    """Common surface: a vocabulary and a per-context logits query."""

    kind: str = "abstract"
    endpoint_or_path: str = ""

    @property
    def vocab(self) -> VocabSpec:
        raise NotImplementedError

    def logits(self, context) -> LogitVector:
        raise NotImplementedError

    def handshake(self) -> VocabSpec:
        """Return the provider's vocabulary, fetching it if remote."""
        return self.vocab


def check_token_sequence(context, vocab: VocabSpec) -> list[int]:
    ids = [int(t) for t in context]
    if not ids:
        raise ValueError("context must be nonempty")
    for t in ids:
        if not 0 <= t < vocab.size:
            raise ValueError(f"token id {t} outside [0, {vocab.size})")
    return ids


# ---------------------------------------------------------------------------
# Byte-level n-gram models


@dataclass
class NGramModel:
    """Add-k-smoothed byte-level n-gram model.

    counts maps a context tuple (the preceding order-1 bytes) to per-byte
    occurrence counts. Conditional probabilities are
    (count + k) / (context_total + k * 256), so unseen contexts fall back
    to the uniform distribution.
    """

    order: int
    smoothing_k: float = 1.0
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.order <= 5:
            raise ValueError(f"order must be in [1, 5], got {self.order}")
        if self.smoothing_k <= 0:
            raise ValueError("smoothing_k must be positive")

    @property
    def vocab(self) -> VocabSpec:
        return BYTE_VOCAB

    def log_probs(self, context) -> np.ndarray:
        """Log conditional probabilities of every byte given the context tail."""
        ctx = tuple(context[-(self.order - 1):]) if self.order > 1 else ()
        row = self.counts.get(ctx)
        vec = np.zeros(256)
        if row:
            for token, count in row.items():
                vec[token] = count
        total = vec.sum()
        probs = (vec + self.smoothing_k) / (total + self.smoothing_k * 256)
        return np.log(probs)


def train_ngram(corpus: bytes, order: int = 3, smoothing_k: float = 1.0) -> NGramModel:
    """Count every length-order window of the corpus."""
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    if not 1 <= order <= 5:
        raise ValueError(f"order must be in [1, 5], got {order}")
    counts: dict = defaultdict(lambda: defaultdict(int))
    for i in range(len(corpus) - order + 1):
        window = corpus[i : i + order]
        counts[tuple(window[:-1])][window[-1]] += 1
    model = NGramModel(order=order, smoothing_k=smoothing_k)
    model.counts = {ctx: dict(row) for ctx, row in counts.items()}
    return model


def save_ngram(model: NGramModel, path: str) -> None:
    doc = {
        "format_version": NGRAM_FORMAT_VERSION,
        "order": model.order,
        "smoothing_k": model.smoothing_k,
        "counts": [
            [list(ctx)] + [[t, c] for t, c in sorted(row.items())]
            for ctx, row in sorted(model.counts.items())
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_ngram(path: str) -> NGramModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != NGRAM_FORMAT_VERSION:
        raise ValueError(
            f"unsupported n-gram format_version: {doc.get('format_version')!r}"
        )
    counts = {}
    for entry in doc["counts"]:
        ctx = tuple(entry[0])
        counts[ctx] = {int(t): int(c) for t, c in entry[1:]}
    return NGramModel(
        order=int(doc["order"]),
        smoothing_k=float(doc["smoothing_k"]),
        counts=counts,
    )


class NGramProvider(Provider):
    kind = "ngram"

    def __init__(self, model: NGramModel, path: str = ""):
        self.model = model
        self.endpoint_or_path = path

    @classmethod
    def from_file(cls, path: str) -> "NGramProvider":
        return cls(load_ngram(path), path=path)

    @property
    def vocab(self) -> VocabSpec:
        return self.model.vocab

    def logits(self, context) -> LogitVector:
        ids = check_token_sequence(context, self.vocab)
        return LogitVector(self.model.log_probs(ids), self.vocab)


# ---------------------------------------------------------------------------
# Scripted providers


class ScriptedProvider(Provider):
    """Replays a fixed list of logit vectors, one per call, then errors."""

    kind = "scripted"

    def __init__(self, script, vocab: VocabSpec | None = None):
        if not script:
            raise ValueError("script must be nonempty")
        if vocab is None:
            vocab = VocabSpec(size=len(script[0]))
        self._vocab = vocab
        self.script = [np.asarray(row, dtype=np.float64) for row in script]
        self.position = 0

    @property
    def vocab(self) -> VocabSpec:
        return self._vocab

    def logits(self, context) -> LogitVector:
        check_token_sequence(context, self.vocab)
        if self.position >= len(self.script):
            raise OutOfScriptError(
                f"script exhausted after {len(self.script)} steps"
            )
        row = self.script[self.position]
        self.position += 1
        return LogitVector(row, self._vocab)

    def reset(self) -> None:
        self.position = 0


# ---------------------------------------------------------------------------
# HTTP client


def _timeout_from_env(default_s: float) -> float:
    raw = os.environ.get("LOGITFUSE_TIMEOUT_MS")
    if raw is None:
        return default_s
    return float(raw) / 1000.0


class HttpProvider(Provider):
    """Client for the logit wire protocol."""

    kind = "http"

    def __init__(
        self,
        base_url: str,
        timeout_s: float | None = None,
        retries: int = DEFAULT_RETRIES,
        mask_threshold: float = MASK_THRESHOLD,
    ):
        self.base_url = base_url.rstrip("/")
        self.endpoint_or_path = self.base_url
        self.timeout_s = (
            timeout_s if timeout_s is not None else _timeout_from_env(DEFAULT_TIMEOUT_S)
        )
        self.retries = retries
        self.mask_threshold = mask_threshold
        self.name: str | None = None
        self._vocab: VocabSpec | None = None
        self._session = requests.Session()

    @property
    def vocab(self) -> VocabSpec:
        if self._vocab is None:
            return self.handshake()
        return self._vocab

    def _request(self, method: str, path: str, **kwargs):
        url = f"{self.base_url}{path}"
        last_exc = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.request(
                    method, url, timeout=self.timeout_s, **kwargs
                )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code == 409:
                raise VocabMismatchError(f"server reported vocab mismatch: {resp.text}")
            if resp.status_code != 200:
                last_exc = ProviderUnavailableError(
                    f"{method} {url} -> {resp.status_code}: {resp.text[:200]}"
                )
                continue
            return resp
        raise ProviderUnavailableError(
            f"{method} {url} failed after {self.retries + 1} attempts: {last_exc}"
        )

    def handshake(self) -> VocabSpec:
        resp = self._request("GET", "/v1/metadata")
        try:
            meta = resp.json()
            size = int(meta["vocab_size"])
            fingerprint = meta.get("fingerprint")
            self.name = meta.get("name")
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedMetadataError(f"bad metadata from {self.base_url}: {exc}")
        self._vocab = VocabSpec(size=size, fingerprint=fingerprint)
        return self._vocab

    def logits(self, context) -> LogitVector:
        vocab = self.vocab
        ids = check_token_sequence(context, vocab)
        resp = self._request("POST", "/v1/logits", json={"token_ids": ids})
        try:
            values = np.asarray(resp.json()["logits"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise ProviderUnavailableError(f"bad logits payload: {exc}")
        if len(values) != vocab.size:
            raise VocabMismatchError(
                f"expected {vocab.size} logits, got {len(values)}"
            )
        values[values <= self.mask_threshold] = -np.inf
        return LogitVector(values, vocab)


# ---------------------------------------------------------------------------
# HTTP server


def make_logit_server(
    provider: Provider, port: int = 0, name: str = "logitfuse"
) -> ThreadingHTTPServer:
    """Build a wire-protocol server wrapping any in-process provider.

    Returns an unstarted ThreadingHTTPServer; call serve_forever() (or run
    it in a thread) and read .server_address for the bound port.
    """
    vocab = provider.vocab

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep stdout machine-stable
            pass

        def _send(self, code: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _check_expected_vocab(self) -> bool:
            query = parse_qs(urlparse(self.path).query)
            expected = query.get("expected_vocab_size")
            if expected and int(expected[0]) != vocab.size:
                self._send(409, {"error": f"vocab size is {vocab.size}"})
                return False
            return True

        def do_GET(self):
            if urlparse(self.path).path != "/v1/metadata":
                self._send(404, {"error": "not found"})
                return
            if not self._check_expected_vocab():
                return
            self._send(
                200,
                {
                    "vocab_size": vocab.size,
                    "fingerprint": vocab.fingerprint,
                    "name": name,
                },
            )

        def do_POST(self):
            if urlparse(self.path).path != "/v1/logits":
                self._send(404, {"error": "not found"})
                return
            if not self._check_expected_vocab():
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                ids = body["token_ids"]
                if not isinstance(ids, list) or not ids:
                    raise ValueError("token_ids must be a nonempty list")
                vec = provider.logits(ids)
            except (ValueError, KeyError, TypeError) as exc:
                self._send(400, {"error": str(exc)})
                return
            values = np.where(np.isfinite(vec.values), vec.values, MASK_SENTINEL)
            self._send(200, {"logits": values.tolist()})

    return ThreadingHTTPServer(("127.0.0.1", port), Handler)


def serve_in_thread(provider: Provider, name: str = "logitfuse"):
    """Start a server on an ephemeral port; returns (server, base_url)."""
    server = make_logit_server(provider, port=0, name=name)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    return server, f"http://{host}:{port}"


# ---------------------------------------------------------------------------
# Provider spec parsing ("ngram:PATH" / "http:URL")


def provider_from_spec(spec: str) -> Provider:
    kind, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise ValueError(f"provider spec must be ngram:PATH or http:URL, got {spec!r}")
    if kind == "ngram":
        return NGramProvider.from_file(rest)
    if kind in ("http", "https"):
        # accept both "http:http://host:port" and a bare "http://host:port"
        url = spec if rest.startswith("//") else rest
        return HttpProvider(url)
    raise ValueError(f"unknown provider kind {kind!r} in {spec!r}")
