"""Reference wire-protocol server for integration tests.

Serves any OcrBackend/VlmBackend pair over the exact /ocr and /extract
HTTP contracts (plus GET /healthz) using only the standard library. Used
by the protocol test suite when no external endpoint is configured.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from .documents import PageImage
from .ocr import png_bytes_to_array


def _token_to_wire(token) -> dict:
    return {
        "text": token.text,
        "box": [[float(x), float(y)] for x, y in token.box],
        "confidence": float(token.confidence),
        "line_id": int(token.line_id) if token.line_id is not None else 0,
        "language": token.language,
    }


class _Handler(BaseHTTPRequestHandler):
    ocr_backend = None
    vlm_backend = None

    def log_message(self, fmt, *args):  # quiet test output
        pass

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/healthz":
            data = b"ok"
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, json.JSONDecodeError):
            self._send(400, {"error": "bad JSON body"})
            return
        try:
            if self.path == "/ocr":
                self._handle_ocr(payload)
            elif self.path == "/extract":
                self._handle_extract(payload)
            else:
                self._send(404, {"error": "not found"})
        except _BadRequest as exc:
            self._send(400, {"error": str(exc)})
        except Exception as exc:  # engine failure -> retryable per protocol
            self._send(500, {"error": f"{type(exc).__name__}: {exc}"})

    def _handle_ocr(self, payload: dict) -> None:
        img_b64 = payload.get("image_png_b64")
        languages = payload.get("languages")
        if not isinstance(img_b64, str) or not isinstance(languages, list):
            raise _BadRequest("expected {'image_png_b64': str, 'languages': [str]}")
        try:
            png = base64.b64decode(img_b64, validate=True)
            arr = png_bytes_to_array(png)
        except (binascii.Error, ValueError, OSError) as exc:
            raise _BadRequest(f"undecodable image: {exc}")
        page = PageImage.from_array(arr, page_no=1)
        tokens = self.ocr_backend.recognize(page, languages)
        self._send(200, {"tokens": [_token_to_wire(t) for t in tokens]})

    def _handle_extract(self, payload: dict) -> None:
        prompt = payload.get("prompt")
        images_b64 = payload.get("images_png_b64")
        max_tokens = payload.get("max_tokens", 512)
        if not isinstance(prompt, str) or not isinstance(images_b64, list):
            raise _BadRequest("expected {'prompt': str, 'images_png_b64': [str], 'max_tokens': int}")
        if not images_b64:
            raise _BadRequest("at least one image required")
        images = []
        for i, b64 in enumerate(images_b64):
            try:
                arr = png_bytes_to_array(base64.b64decode(b64, validate=True))
            except (binascii.Error, ValueError, OSError) as exc:
                raise _BadRequest(f"undecodable image #{i}: {exc}")
            images.append(PageImage.from_array(arr, page_no=i + 1))
        text = self.vlm_backend.generate(prompt, images, int(max_tokens))
        self._send(200, {"text": text})


class _BadRequest(Exception):
    pass


@contextmanager
def serve_backends(ocr_backend, vlm_backend, port: int = 0):
    """Serve the wire protocols on localhost; yields the base URL."""
    handler = type("BoundHandler", (_Handler,), {
        "ocr_backend": ocr_backend,
        "vlm_backend": vlm_backend,
    })
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)
