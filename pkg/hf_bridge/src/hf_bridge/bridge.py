"""Logit wire-protocol server over transformer checkpoints.

Exposes any causal LM loadable by transformers through the same HTTP
protocol the fusion engine's http: provider speaks:

    GET  /v1/metadata  -> {"vocab_size": int, "fingerprint": str, "name": str}
    POST /v1/logits    body {"token_ids": [int, ...]}
                       -> {"logits": [float, ...]} of exactly vocab_size numbers

Logits are the raw final-layer scores for the next token given token_ids,
with no sampling or temperature applied. Non-finite values travel as the
sentinel -1e30. Errors: 400 malformed body, 409 vocab mismatch against a
client-supplied expected_vocab_size query parameter, 503 until the model
has finished loading (or if loading failed).

The model loads in a background thread so the socket is listening, and
returning 503, from the moment the server is constructed. Forward passes
are serialized by a lock; responses stay independent per request.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

MASK_SENTINEL = -1e30
MAX_VOCAB_SIZE = 10_000_000


@dataclass(frozen=True)
class BridgeConfig:
    """Startup options: which checkpoint to serve, where, and how."""

    checkpoint: str
    device: str = "cpu"
    port: int = 0
    name: str | None = None


def tokenizer_fingerprint(tokenizer) -> str:
    """Hex digest of the tokenizer's token list, ordered by token id.

    Depends only on the vocabulary, so it is stable across restarts and
    across bridge instances serving the same checkpoint.
    """
    vocab = tokenizer.get_vocab()
    tokens = [token for token, _ in sorted(vocab.items(), key=lambda kv: (kv[1], kv[0]))]
    return hashlib.sha256("\n".join(tokens).encode("utf-8")).hexdigest()


def ensure_vocab_within_limit(vocab_size: int) -> None:
    """Refuse vocabularies too large for one JSON float array per response."""
    if vocab_size > MAX_VOCAB_SIZE:
        raise ValueError(
            f"vocab size {vocab_size} exceeds the protocol limit "
            f"of {MAX_VOCAB_SIZE} float entries"
        )


def encode_logits(values: np.ndarray) -> list[float]:
    """JSON-safe logit array: non-finite entries become the mask sentinel."""
    values = np.asarray(values, dtype=np.float64)
    return np.where(np.isfinite(values), values, MASK_SENTINEL).tolist()


class CheckpointModel:
    """A loaded causal LM plus its tokenizer-derived identity."""

    def __init__(self, checkpoint: str, device: str = "cpu"):
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        self.model = AutoModelForCausalLM.from_pretrained(checkpoint)
        self.model.to(device)
        self.model.eval()
        self.device = device
        self.vocab_size = int(self.model.get_output_embeddings().weight.shape[0])
        ensure_vocab_within_limit(self.vocab_size)
        self.fingerprint = tokenizer_fingerprint(self.tokenizer)
        self._lock = threading.Lock()

    def next_token_logits(self, token_ids: list[int]) -> np.ndarray:
        """Final-layer scores for the token after token_ids, as float64."""
        torch = self._torch
        ids = torch.tensor([token_ids], dtype=torch.long, device=self.device)
        with self._lock, torch.no_grad():
            out = self.model(input_ids=ids)
        return out.logits[0, -1, :].double().cpu().numpy()


def make_bridge_server(config: BridgeConfig, loader=None) -> ThreadingHTTPServer:
    """Build the server and kick off model loading in the background.

    loader defaults to loading config.checkpoint via transformers; tests
    can inject a callable returning any object with the CheckpointModel
    surface (vocab_size, fingerprint, next_token_logits).
    """
    if loader is None:
        def loader():
            return CheckpointModel(config.checkpoint, config.device)

    state: dict = {"model": None, "error": None}
    name = config.name or config.checkpoint

    def load():
        try:
            state["model"] = loader()
        except Exception as exc:  # surfaced to clients as 503
            state["error"] = f"{type(exc).__name__}: {exc}"

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, code: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _model(self):
            model = state["model"]
            if model is None:
                detail = state["error"] or "model is loading"
                self._send(503, {"error": detail})
                return None
            return model

        def _check_expected_vocab(self, model) -> bool:
            query = parse_qs(urlparse(self.path).query)
            expected = query.get("expected_vocab_size")
            if expected and int(expected[0]) != model.vocab_size:
                self._send(409, {"error": f"vocab size is {model.vocab_size}"})
                return False
            return True

        def do_GET(self):
            if urlparse(self.path).path != "/v1/metadata":
                self._send(404, {"error": "not found"})
                return
            model = self._model()
            if model is None or not self._check_expected_vocab(model):
                return
            self._send(
                200,
                {
                    "vocab_size": model.vocab_size,
                    "fingerprint": model.fingerprint,
                    "name": name,
                },
            )

        def do_POST(self):
            if urlparse(self.path).path != "/v1/logits":
                self._send(404, {"error": "not found"})
                return
            model = self._model()
            if model is None or not self._check_expected_vocab(model):
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                ids = body["token_ids"]
                if not isinstance(ids, list) or not ids:
                    raise ValueError("token_ids must be a nonempty list")
                ids = [int(t) for t in ids]
                for t in ids:
                    if not 0 <= t < model.vocab_size:
                        raise ValueError(
                            f"token id {t} outside [0, {model.vocab_size})"
                        )
            except (ValueError, KeyError, TypeError) as exc:
                self._send(400, {"error": str(exc)})
                return
            self._send(200, {"logits": encode_logits(model.next_token_logits(ids))})

    server = ThreadingHTTPServer(("127.0.0.1", config.port), Handler)
    threading.Thread(target=load, daemon=True).start()
    return server


def serve_in_thread(config: BridgeConfig, loader=None):
    """Start a bridge on an ephemeral port; returns (server, base_url)."""
    server = make_bridge_server(config, loader=loader)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    return server, f"http://{host}:{port}"
