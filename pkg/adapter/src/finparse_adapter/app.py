"""FastAPI application exposing OCR and VLM engines on the wire protocols.

The adapter is stateless: engines warm up at startup, every request is
independent, and excess concurrency is shed with 503 + Retry-After (which
the pipeline client honors). Responses conform bit-exactly to the
published schemas; engine outputs are defensively clamped.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading
from contextlib import asynccontextmanager
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from PIL import Image

from .config import AdapterConfig
from .engines import build_ocr_engine, build_vlm_engine


def _decode_png_b64(data: str) -> np.ndarray:
    raw = base64.b64decode(data, validate=True)
    with Image.open(io.BytesIO(raw)) as im:
        converted = im.convert("L") if im.mode in ("1", "L") else im.convert("RGB")
        return np.asarray(converted, dtype=np.uint8)


def _clamp_token(tok: dict, width: int, height: int) -> Optional[dict]:
    try:
        box = [[float(x), float(y)] for x, y in tok["box"]]
        if len(box) != 4:
            return None
        box = [[min(max(x, 0.0), float(width)), min(max(y, 0.0), float(height))]
               for x, y in box]
        return {
            "text": str(tok.get("text", "")),
            "box": box,
            "confidence": min(max(float(tok.get("confidence", 0.0)), 0.0), 1.0),
            "line_id": int(tok.get("line_id", 0)),
            "language": tok.get("language"),
        }
    except (KeyError, TypeError, ValueError):
        return None


def _truncate_tokens(text: str, max_tokens: int) -> str:
    words = text.split()
    if len(words) <= max_tokens:
        return text
    return " ".join(words[:max_tokens])


def create_app(config: Optional[AdapterConfig] = None) -> FastAPI:
    cfg = config or AdapterConfig()
    ocr_engine = build_ocr_engine(cfg.ocr)
    vlm_engine = build_vlm_engine(cfg.vlm)
    slots = threading.BoundedSemaphore(cfg.max_concurrent_requests)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        for engine in (ocr_engine, vlm_engine):
            warmup = getattr(engine, "warmup", None)
            if warmup is not None:
                warmup()
        yield

    app = FastAPI(lifespan=lifespan)

    def _overloaded() -> JSONResponse:
        return JSONResponse(
            status_code=503,
            content={"error": "overloaded, retry later"},
            headers={"Retry-After": str(cfg.retry_after_s)},
        )

    def _too_large(size: int) -> JSONResponse:
        return JSONResponse(
            status_code=413,
            content={"error": f"payload of {size} bytes exceeds "
                              f"{cfg.max_request_bytes} byte limit"},
        )

    async def _read_payload(request: Request):
        declared = request.headers.get("content-length")
        if declared and int(declared) > cfg.max_request_bytes:
            return None, _too_large(int(declared))
        body = await request.body()
        if len(body) > cfg.max_request_bytes:
            return None, _too_large(len(body))
        try:
            import json as _json
            payload = _json.loads(body)
        except ValueError:
            return None, JSONResponse(status_code=400,
                                      content={"error": "bad JSON body"})
        if not isinstance(payload, dict):
            return None, JSONResponse(status_code=400,
                                      content={"error": "expected JSON object"})
        return payload, None

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.post("/ocr")
    async def serve_ocr(request: Request):
        payload, err = await _read_payload(request)
        if err is not None:
            return err
        img_b64 = payload.get("image_png_b64")
        languages = payload.get("languages")
        if not isinstance(img_b64, str) or not isinstance(languages, list) \
                or not all(isinstance(x, str) for x in languages):
            return JSONResponse(status_code=400, content={
                "error": "expected {'image_png_b64': str, 'languages': [str]}"})
        try:
            image = _decode_png_b64(img_b64)
        except (binascii.Error, ValueError, OSError) as exc:
            return JSONResponse(status_code=400,
                                content={"error": f"undecodable image: {exc}"})
        if not slots.acquire(blocking=False):
            return _overloaded()
        try:
            raw_tokens = ocr_engine.recognize(image, languages)
        except Exception as exc:  # engine failure -> 500 diagnostic
            return JSONResponse(status_code=500, content={
                "error": f"ocr engine failure: {type(exc).__name__}: {exc}"})
        finally:
            slots.release()
        h, w = image.shape[:2]
        tokens = [t for t in (_clamp_token(tok, w, h) for tok in raw_tokens)
                  if t is not None]
        return JSONResponse(status_code=200, content={"tokens": tokens})

    @app.post("/extract")
    async def serve_extract(request: Request):
        payload, err = await _read_payload(request)
        if err is not None:
            return err
        prompt = payload.get("prompt")
        images_b64 = payload.get("images_png_b64")
        max_tokens = payload.get("max_tokens", 512)
        if not isinstance(prompt, str) or not isinstance(images_b64, list) \
                or not isinstance(max_tokens, int):
            return JSONResponse(status_code=400, content={
                "error": "expected {'prompt': str, 'images_png_b64': [str], "
                         "'max_tokens': int}"})
        if not images_b64:
            return JSONResponse(status_code=400,
                                content={"error": "at least one image required"})
        images = []
        for i, b64 in enumerate(images_b64):
            try:
                images.append(_decode_png_b64(b64))
            except (binascii.Error, ValueError, OSError, TypeError) as exc:
                return JSONResponse(status_code=400, content={
                    "error": f"undecodable image #{i}: {exc}"})
        capped = min(max_tokens, cfg.vlm.max_tokens_cap)
        if not slots.acquire(blocking=False):
            return _overloaded()
        try:
            text = vlm_engine.generate(prompt, images, capped)
        except Exception as exc:
            return JSONResponse(status_code=500, content={
                "error": f"vlm engine failure: {type(exc).__name__}: {exc}"})
        finally:
            slots.release()
        return JSONResponse(status_code=200,
                            content={"text": _truncate_tokens(text, capped)})

    return app
