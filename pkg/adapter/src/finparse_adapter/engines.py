"""Pluggable OCR and VLM engines.

Engines are loaded by dotted path ("module:Class") so a real deployment
can drop in PaddleOCR or a hosted model client without touching the
service. The built-ins are deterministic and fully offline: a projection
based text-region detector for OCR and a null/upstream pair for the VLM.
"""

from __future__ import annotations

import importlib
import json
from typing import Protocol, Sequence

import numpy as np
import requests


class OcrEngine(Protocol):
    def recognize(self, image: np.ndarray, languages: Sequence[str]) -> list[dict]:
        """Returns wire-shaped tokens: text, box, confidence, line_id, language."""

    def warmup(self) -> None: ...


class VlmEngine(Protocol):
    def generate(self, prompt: str, images: list[np.ndarray], max_tokens: int) -> str: ...

    def warmup(self) -> None: ...


def load_engine(spec: str, **options):
    mod_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"engine spec {spec!r} must look like 'module:Class'")
    module = importlib.import_module(mod_name)
    cls = getattr(module, attr)
    return cls(**options)


class BlobOcrEngine:
    """Detection-only OCR: finds text-line regions by ink projections.

    Emits one token per connected word blob with a fill-ratio confidence.
    Recognition is out of scope for the built-in engine, so token text is a
    placeholder; swap in a real engine for actual transcription.
    """

    def __init__(self, ink_threshold: int = 128, min_line_ink: int = 2,
                 word_gap_px: int = 6, min_word_px: int = 3):
        self.ink_threshold = ink_threshold
        self.min_line_ink = min_line_ink
        self.word_gap_px = word_gap_px
        self.min_word_px = min_word_px

    def warmup(self) -> None:
        self.recognize(np.full((8, 8), 255, dtype=np.uint8), ["en"])

    def _lines(self, mask: np.ndarray) -> list[tuple[int, int]]:
        rows = mask.sum(axis=1)
        lines = []
        start = None
        for r, count in enumerate(rows):
            if count >= self.min_line_ink and start is None:
                start = r
            elif count < self.min_line_ink and start is not None:
                lines.append((start, r))
                start = None
        if start is not None:
            lines.append((start, len(rows)))
        return lines

    def _words(self, band: np.ndarray) -> list[tuple[int, int]]:
        cols = band.sum(axis=0)
        words = []
        start = None
        gap = 0
        for c, count in enumerate(cols):
            if count > 0:
                if start is None:
                    start = c
                gap = 0
            elif start is not None:
                gap += 1
                if gap >= self.word_gap_px:
                    words.append((start, c - gap + 1))
                    start = None
        if start is not None:
            words.append((start, len(cols)))
        return [(a, b) for a, b in words if b - a >= self.min_word_px]

    def recognize(self, image: np.ndarray, languages: Sequence[str]) -> list[dict]:
        if image.ndim == 3:
            image = image.mean(axis=2).astype(np.uint8)
        mask = image < self.ink_threshold
        language = languages[0] if languages else None
        tokens = []
        for line_id, (y0, y1) in enumerate(self._lines(mask)):
            band = mask[y0:y1]
            for x0, x1 in self._words(band):
                fill = float(band[:, x0:x1].mean())
                tokens.append({
                    "text": f"region_{line_id}_{x0}",
                    "box": [[float(x0), float(y0)], [float(x1), float(y0)],
                            [float(x1), float(y1)], [float(x0), float(y1)]],
                    "confidence": fill,
                    "line_id": line_id,
                    "language": language,
                })
        return tokens


class NullVlmEngine:
    """Always abstains with a schema-valid reply; the offline default."""

    REPLY = json.dumps({"value": None, "unit_scale": 1, "currency": None,
                        "page_no": None, "quote": None})

    def __init__(self, **_options):
        pass

    def warmup(self) -> None:
        pass

    def generate(self, prompt: str, images: list[np.ndarray], max_tokens: int) -> str:
        return self.REPLY


class UpstreamVlmEngine:
    """Forwards requests to a hosted model behind the same wire contract."""

    def __init__(self, endpoint: str, timeout_s: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s

    def warmup(self) -> None:
        pass

    def generate(self, prompt: str, images: list[np.ndarray], max_tokens: int) -> str:
        import base64
        import io

        from PIL import Image

        encoded = []
        for arr in images:
            mode = "L" if arr.ndim == 2 else "RGB"
            buf = io.BytesIO()
            Image.fromarray(arr, mode=mode).save(buf, format="PNG")
            encoded.append(base64.b64encode(buf.getvalue()).decode("ascii"))
        payload = {"prompt": prompt, "images_png_b64": encoded,
                   "max_tokens": max_tokens}
        resp = requests.post(self.endpoint + "/extract", json=payload,
                             timeout=self.timeout_s)
        resp.raise_for_status()
        text = resp.json().get("text")
        if not isinstance(text, str):
            raise RuntimeError("upstream reply missing 'text'")
        return text


def build_ocr_engine(cfg) -> OcrEngine:
    return load_engine(cfg.engine, **cfg.options)


def build_vlm_engine(cfg) -> VlmEngine:
    if cfg.upstream_endpoint:
        return UpstreamVlmEngine(cfg.upstream_endpoint, **cfg.options)
    return load_engine(cfg.engine, **cfg.options)
