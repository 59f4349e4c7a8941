import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from finparse_adapter import AdapterConfig, create_app
from finparse_adapter.config import MIN_REQUEST_BYTES
from finparse_adapter.engines import BlobOcrEngine

from conftest import png_b64, text_image


class TestHealth:
    def test_healthz(self, client):
        r = client.get("/healthz")
        assert r.status_code == 200
        assert r.text == "ok"


class TestServeOcr:
    def test_blank_image_returns_empty_tokens(self, client):
        blank = np.full((100, 100), 255, dtype=np.uint8)
        r = client.post("/ocr", json={"image_png_b64": png_b64(blank),
                                      "languages": ["en"]})
        assert r.status_code == 200
        assert r.json() == {"tokens": []}

    def test_detected_boxes_lie_inside_image(self, client):
        img = text_image()
        r = client.post("/ocr", json={"image_png_b64": png_b64(img),
                                      "languages": ["en"]})
        h, w = img.shape
        for tok in r.json()["tokens"]:
            for x, y in tok["box"]:
                assert 0 <= x <= w and 0 <= y <= h
            assert 0.0 <= tok["confidence"] <= 1.0

    def test_truncated_base64_is_400(self, client):
        r = client.post("/ocr", json={"image_png_b64": "!!!not-b64",
                                      "languages": ["en"]})
        assert r.status_code == 400

    def test_valid_b64_invalid_png_is_400(self, client):
        bogus = base64.b64encode(b"not a png at all").decode()
        r = client.post("/ocr", json={"image_png_b64": bogus, "languages": ["en"]})
        assert r.status_code == 400

    def test_missing_keys_is_400(self, client):
        assert client.post("/ocr", json={"languages": ["en"]}).status_code == 400
        assert client.post("/ocr", json={"image_png_b64": "aGk="}).status_code == 400

    def test_engine_outputs_are_clamped(self):
        class WildEngine:
            def warmup(self):
                pass

            def recognize(self, image, languages):
                h, w = image.shape[:2]
                return [{"text": "x", "box": [[-50, -50], [w + 99, -50],
                                              [w + 99, h + 99], [-50, h + 99]],
                         "confidence": 7.5, "line_id": 0, "language": None}]

        cfg = AdapterConfig()
        cfg.ocr.engine = f"{WildEngine.__module__}:WildEngine"
        import sys
        setattr(sys.modules[WildEngine.__module__], "WildEngine", WildEngine)
        client = TestClient(create_app(cfg))
        img = text_image()
        r = client.post("/ocr", json={"image_png_b64": png_b64(img),
                                      "languages": ["en"]})
        tok = r.json()["tokens"][0]
        h, w = img.shape
        assert tok["confidence"] == 1.0
        assert all(0 <= x <= w and 0 <= y <= h for x, y in tok["box"])

    def test_engine_failure_returns_500_with_diagnostic(self):
        class BoomEngine:
            def warmup(self):
                pass

            def recognize(self, image, languages):
                raise RuntimeError("engine exploded")

        import sys
        setattr(sys.modules[BoomEngine.__module__], "BoomEngine", BoomEngine)
        cfg = AdapterConfig()
        cfg.ocr.engine = f"{BoomEngine.__module__}:BoomEngine"
        client = TestClient(create_app(cfg))
        r = client.post("/ocr", json={"image_png_b64": png_b64(text_image()),
                                      "languages": ["en"]})
        assert r.status_code == 500
        assert "engine exploded" in r.json()["error"]

    def test_oversized_payload_is_413(self, client):
        r = client.post("/ocr", json={"image_png_b64": "aGk=", "languages": ["en"]},
                        headers={"Content-Length": str(64 * 1024 * 1024)})
        assert r.status_code == 413


class TestServeExtract:
    def test_happy_path(self, client):
        r = client.post("/extract", json={"prompt": "p",
                                          "images_png_b64": [png_b64(text_image())],
                                          "max_tokens": 32})
        assert r.status_code == 200
        assert isinstance(r.json()["text"], str)

    def test_zero_images_is_400(self, client):
        r = client.post("/extract", json={"prompt": "p", "images_png_b64": [],
                                          "max_tokens": 32})
        assert r.status_code == 400

    def test_reply_truncated_to_max_tokens(self):
        class Chatty:
            def warmup(self):
                pass

            def generate(self, prompt, images, max_tokens):
                return " ".join(f"w{i}" for i in range(1000))

        import sys
        setattr(sys.modules[Chatty.__module__], "Chatty", Chatty)
        cfg = AdapterConfig()
        cfg.vlm.engine = f"{Chatty.__module__}:Chatty"
        client = TestClient(create_app(cfg))
        r = client.post("/extract", json={"prompt": "p",
                                          "images_png_b64": [png_b64(text_image())],
                                          "max_tokens": 7})
        assert r.status_code == 200
        assert len(r.json()["text"].split()) == 7


class TestConcurrencyShedding:
    def test_excess_requests_get_503_with_retry_after(self):
        import threading

        release = threading.Event()
        started = threading.Event()

        class SlowEngine:
            def warmup(self):
                pass

            def recognize(self, image, languages):
                started.set()
                release.wait(timeout=10)
                return []

        import sys
        setattr(sys.modules[SlowEngine.__module__], "SlowEngine", SlowEngine)
        cfg = AdapterConfig(max_concurrent_requests=1, retry_after_s=2)
        cfg.ocr.engine = f"{SlowEngine.__module__}:SlowEngine"
        client = TestClient(create_app(cfg))
        payload = {"image_png_b64": png_b64(text_image()), "languages": ["en"]}

        results = {}

        def occupy():
            results["first"] = client.post("/ocr", json=payload).status_code

        t = threading.Thread(target=occupy)
        t.start()
        assert started.wait(timeout=10)
        r = client.post("/ocr", json=payload)
        release.set()
        t.join(timeout=10)
        assert r.status_code == 503
        assert r.headers["Retry-After"] == "2"
        assert results["first"] == 200


class TestConfig:
    def test_size_limit_floor_enforced(self):
        with pytest.raises(ValueError, match="renormalized page"):
            AdapterConfig(max_request_bytes=MIN_REQUEST_BYTES - 1)

    def test_defaults_valid(self):
        cfg = AdapterConfig()
        assert cfg.max_request_bytes >= MIN_REQUEST_BYTES


class TestBlobEngine:
    def test_finds_lines_and_words(self):
        img = text_image()
        tokens = BlobOcrEngine().recognize(img, ["en"])
        assert tokens
        line_ids = {t["line_id"] for t in tokens}
        assert len(line_ids) >= 3  # one per text band
        words_line0 = [t for t in tokens if t["line_id"] == 0]
        assert len(words_line0) == 2  # two blobs per band in the fixture

    def test_rgb_input_accepted(self):
        rgb = np.stack([text_image()] * 3, axis=2)
        assert BlobOcrEngine().recognize(rgb, ["en"])
