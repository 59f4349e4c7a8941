"""Wire-protocol tests.

The conformance class runs against OCR_ENDPOINT / VLM_ENDPOINT when those
are set (e.g. a live adapter service); otherwise it spins up the built-in
reference server over the synthetic backends. The client-robustness tests
always use local misbehaving servers.
"""

import base64
import json
import os
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
import requests

from finparse.documents import PageImage
from finparse.errors import ProtocolError, TransportError
from finparse.extraction import HttpVlmBackend, ScriptedVlmBackend
from finparse.ocr import (HttpOcrBackend, SyntheticOcrBackend,
                          page_to_png_bytes, transcribe)
from finparse.synth import render_text_page
from finparse.testing import serve_backends

from conftest import page_from


def _png_b64(page: PageImage) -> str:
    return base64.b64encode(page_to_png_bytes(page)).decode("ascii")


@pytest.fixture(scope="module")
def endpoints(rng_module):
    """(ocr_base, vlm_base): external endpoints if configured, else the
    reference server over synthetic backends."""
    ocr_env = os.environ.get("OCR_ENDPOINT")
    vlm_env = os.environ.get("VLM_ENDPOINT")
    if ocr_env and vlm_env:
        yield ocr_env, vlm_env
        return
    img, tokens = render_text_page(rng_module, header=["Revenue", "4,500"])
    ocr_backend = SyntheticOcrBackend()
    ocr_backend.register("page", img, tokens)
    vlm_backend = ScriptedVlmBackend(
        [], default_reply=json.dumps({"value": None, "unit_scale": 1,
                                      "currency": None, "page_no": None,
                                      "quote": None}))
    with serve_backends(ocr_backend, vlm_backend) as base:
        yield base, base


@pytest.fixture(scope="module")
def rng_module():
    return np.random.default_rng(99)


def _white_page(h=64, w=64):
    return page_from(np.full((h, w), 255, dtype=np.uint8))


class TestWireConformance:
    """Must pass against any conformant server, including the adapter."""

    def test_healthz(self, endpoints):
        for base in set(endpoints):
            r = requests.get(base.rstrip("/") + "/healthz", timeout=10)
            assert r.status_code == 200
            assert r.text.strip() == "ok"

    def test_ocr_blank_image_returns_empty_tokens(self, endpoints):
        ocr_base, _ = endpoints
        payload = {"image_png_b64": _png_b64(_white_page()), "languages": ["en"]}
        r = requests.post(ocr_base.rstrip("/") + "/ocr", json=payload, timeout=30)
        assert r.status_code == 200
        assert r.json() == {"tokens": []}

    def test_ocr_response_token_shape(self, endpoints, rng_module):
        ocr_base, _ = endpoints
        img, _ = render_text_page(rng_module, header=["Revenue", "4,500"])
        page = page_from(img)
        payload = {"image_png_b64": _png_b64(page), "languages": ["en", "zh", "id"]}
        r = requests.post(ocr_base.rstrip("/") + "/ocr", json=payload, timeout=60)
        assert r.status_code == 200
        body = r.json()
        assert isinstance(body["tokens"], list)
        for tok in body["tokens"]:
            assert set(tok) >= {"text", "box", "confidence", "line_id"}
            assert isinstance(tok["text"], str)
            assert len(tok["box"]) == 4
            for x, y in tok["box"]:
                assert 0 <= x <= page.width_px
                assert 0 <= y <= page.height_px
            assert 0.0 <= tok["confidence"] <= 1.0
            assert isinstance(tok["line_id"], int)

    def test_ocr_truncated_base64_is_400(self, endpoints):
        ocr_base, _ = endpoints
        payload = {"image_png_b64": "not!!valid@@b64", "languages": ["en"]}
        r = requests.post(ocr_base.rstrip("/") + "/ocr", json=payload, timeout=10)
        assert r.status_code == 400

    def test_ocr_missing_keys_is_400(self, endpoints):
        ocr_base, _ = endpoints
        r = requests.post(ocr_base.rstrip("/") + "/ocr", json={"nope": 1}, timeout=10)
        assert r.status_code == 400

    def test_extract_returns_text(self, endpoints):
        _, vlm_base = endpoints
        payload = {"prompt": "Reply with a JSON object.",
                   "images_png_b64": [_png_b64(_white_page())],
                   "max_tokens": 64}
        r = requests.post(vlm_base.rstrip("/") + "/extract", json=payload, timeout=60)
        assert r.status_code == 200
        body = r.json()
        assert isinstance(body["text"], str)

    def test_extract_zero_images_is_400(self, endpoints):
        _, vlm_base = endpoints
        payload = {"prompt": "p", "images_png_b64": [], "max_tokens": 16}
        r = requests.post(vlm_base.rstrip("/") + "/extract", json=payload, timeout=10)
        assert r.status_code == 400

    def test_http_ocr_client_roundtrip(self, endpoints):
        ocr_base, _ = endpoints
        backend = HttpOcrBackend(ocr_base)
        t = transcribe(backend, _white_page(), ["en"])
        assert t.tokens == ()

    def test_http_vlm_client_roundtrip(self, endpoints):
        _, vlm_base = endpoints
        backend = HttpVlmBackend(vlm_base)
        text = backend.generate("hello", [_white_page()], 32)
        assert isinstance(text, str) and text


# --- client robustness against misbehaving servers ----------------------------

class _ScriptedHttp:
    """Serves a scripted sequence of (status, body, headers) responses."""

    def __init__(self, script):
        self.script = list(script)
        self.requests_seen = []
        handler_script = self.script
        seen = self.requests_seen

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                seen.append((self.path, self.rfile.read(length)))
                status, body, headers = (
                    handler_script.pop(0) if handler_script else (500, "{}", {})
                )
                data = body.encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                for k, v in headers.items():
                    self.send_header(k, v)
                self.end_headers()
                self.wfile.write(data)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return f"http://127.0.0.1:{self.server.server_address[1]}"

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


class TestClientRetrySemantics:
    def test_5xx_then_success_is_retried(self):
        ok = json.dumps({"tokens": []})
        with _ScriptedHttp([(503, "{}", {}), (200, ok, {})]) as base:
            backend = HttpOcrBackend(base, retries=2)
            t = transcribe(backend, _white_page(), ["en"])
            assert t.tokens == ()

    def test_retry_after_header_honored(self):
        ok = json.dumps({"tokens": []})
        with _ScriptedHttp([(503, "{}", {"Retry-After": "0.5"}), (200, ok, {})]) as base:
            backend = HttpOcrBackend(base, retries=1)
            t0 = time.monotonic()
            transcribe(backend, _white_page(), ["en"])
            assert time.monotonic() - t0 >= 0.5

    def test_persistent_5xx_exhausts_to_transport_error(self):
        with _ScriptedHttp([(500, "{}", {})] * 5) as base:
            backend = HttpOcrBackend(base, retries=2)
            with pytest.raises(TransportError, match="giving up"):
                backend.recognize(_white_page(), ["en"])

    def test_4xx_is_protocol_error_without_retry(self):
        srv = _ScriptedHttp([(400, '{"error": "bad"}', {})])
        with srv as base:
            backend = HttpOcrBackend(base, retries=3)
            with pytest.raises(ProtocolError, match="400"):
                backend.recognize(_white_page(), ["en"])
        assert len(srv.requests_seen) == 1

    def test_invalid_confidence_from_server_is_protocol_error(self):
        bad = json.dumps({"tokens": [{"text": "x", "box": [[0, 0], [5, 0], [5, 5], [0, 5]],
                                      "confidence": 1.7, "line_id": 0,
                                      "language": None}]})
        with _ScriptedHttp([(200, bad, {})]) as base:
            backend = HttpOcrBackend(base)
            with pytest.raises(ProtocolError, match="confidence"):
                transcribe(backend, _white_page(), ["en"])

    def test_extract_missing_text_is_protocol_error(self):
        with _ScriptedHttp([(200, '{"wrong": 1}', {})]) as base:
            backend = HttpVlmBackend(base)
            with pytest.raises(ProtocolError, match="text"):
                backend.generate("p", [_white_page()], 16)

    def test_non_json_success_body_is_protocol_error(self):
        with _ScriptedHttp([(200, "<html>oops</html>", {})]) as base:
            backend = HttpOcrBackend(base)
            with pytest.raises(ProtocolError, match="non-JSON"):
                backend.recognize(_white_page(), ["en"])
