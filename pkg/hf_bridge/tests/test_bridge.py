"""Unit tests for the bridge server against injected stub models."""

import json
import threading
import time
from pathlib import Path

import numpy as np
import pytest
import requests

pytest.importorskip("hf_bridge")

from hf_bridge import (
    MASK_SENTINEL,
    BridgeConfig,
    encode_logits,
    ensure_vocab_within_limit,
    serve_in_thread,
)

GOLDEN = json.loads(
    (Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "protocol_golden.json")
    .read_text()
)


class StubModel:
    """Minimal object with the loaded-checkpoint surface."""

    def __init__(self, vocab_size=8, fingerprint="stub"):
        self.vocab_size = vocab_size
        self.fingerprint = fingerprint

    def next_token_logits(self, token_ids):
        rng = np.random.default_rng(sum(token_ids))
        return rng.normal(size=self.vocab_size)


def stub_bridge(model=None, name="stub"):
    config = BridgeConfig(checkpoint="stub", name=name)
    made = model or StubModel()
    return serve_in_thread(config, loader=lambda: made)


def wait_ready(url, timeout_s=5.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        resp = requests.get(f"{url}/v1/metadata", timeout=2)
        if resp.status_code == 200:
            return resp
        time.sleep(0.01)
    raise AssertionError("bridge never became ready")


class TestEncodeLogits:
    def test_finite_passthrough(self):
        assert encode_logits(np.array([1.5, -2.0])) == [1.5, -2.0]

    def test_nonfinite_to_sentinel(self):
        out = encode_logits(np.array([0.0, -np.inf, np.nan, np.inf]))
        assert out[0] == 0.0
        assert out[1:] == [MASK_SENTINEL] * 3

    def test_sentinel_below_client_threshold(self):
        assert MASK_SENTINEL <= GOLDEN["mask_threshold"]


class TestVocabLimit:
    def test_within_limit_ok(self):
        ensure_vocab_within_limit(10_000_000)

    def test_over_limit_rejected(self):
        with pytest.raises(ValueError):
            ensure_vocab_within_limit(10_000_001)


class TestProtocol:
    def test_metadata_shape(self):
        server, url = stub_bridge(name="unit")
        try:
            meta = wait_ready(url).json()
            for field in GOLDEN["metadata"]["required_fields"]:
                assert field in meta
            assert meta["vocab_size"] == 8
            assert meta["name"] == "unit"
        finally:
            server.shutdown()

    def test_logits_shape_and_determinism(self):
        server, url = stub_bridge()
        try:
            wait_ready(url)
            body = {"token_ids": [1, 2, 3]}
            a = requests.post(f"{url}/v1/logits", json=body, timeout=5).json()
            b = requests.post(f"{url}/v1/logits", json=body, timeout=5).json()
            assert len(a["logits"]) == 8
            assert a == b
        finally:
            server.shutdown()

    def test_malformed_bodies_rejected(self):
        server, url = stub_bridge()
        try:
            wait_ready(url)
            for raw in GOLDEN["malformed_bodies"]:
                resp = requests.post(
                    f"{url}/v1/logits", data=raw.encode(),
                    headers={"Content-Type": "application/json"}, timeout=5,
                )
                assert resp.status_code == GOLDEN["status_codes"]["malformed_body"]
        finally:
            server.shutdown()

    def test_out_of_range_token_rejected(self):
        server, url = stub_bridge()
        try:
            wait_ready(url)
            resp = requests.post(
                f"{url}/v1/logits", json={"token_ids": [99]}, timeout=5
            )
            assert resp.status_code == 400
        finally:
            server.shutdown()

    def test_vocab_mismatch_409(self):
        server, url = stub_bridge()
        try:
            wait_ready(url)
            mismatch = GOLDEN["status_codes"]["vocab_mismatch"]
            for path in ("/v1/metadata", "/v1/logits"):
                kwargs = {} if path == "/v1/metadata" else {"json": {"token_ids": [1]}}
                method = requests.get if path == "/v1/metadata" else requests.post
                resp = method(f"{url}{path}?expected_vocab_size=99", timeout=5, **kwargs)
                assert resp.status_code == mismatch
            resp = requests.get(f"{url}/v1/metadata?expected_vocab_size=8", timeout=5)
            assert resp.status_code == 200
        finally:
            server.shutdown()

    def test_unknown_path_404(self):
        server, url = stub_bridge()
        try:
            wait_ready(url)
            assert requests.get(f"{url}/v2/metadata", timeout=5).status_code == 404
        finally:
            server.shutdown()


class TestLoading:
    def test_503_until_loaded(self):
        release = threading.Event()

        def slow_loader():
            release.wait(timeout=10)
            return StubModel()

        config = BridgeConfig(checkpoint="stub")
        server, url = serve_in_thread(config, loader=slow_loader)
        try:
            resp = requests.get(f"{url}/v1/metadata", timeout=5)
            assert resp.status_code == GOLDEN["status_codes"]["model_loading"]
            release.set()
            assert wait_ready(url).status_code == 200
        finally:
            release.set()
            server.shutdown()

    def test_load_failure_stays_503(self):
        def broken_loader():
            raise RuntimeError("no such checkpoint")

        server, url = serve_in_thread(
            BridgeConfig(checkpoint="missing"), loader=broken_loader
        )
        try:
            time.sleep(0.05)
            resp = requests.get(f"{url}/v1/metadata", timeout=5)
            assert resp.status_code == 503
            assert "no such checkpoint" in resp.json()["error"]
        finally:
            server.shutdown()
