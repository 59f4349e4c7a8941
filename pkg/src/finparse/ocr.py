"""OCR backend contract, wire client, and the deterministic synthetic backend.

A backend turns a page image into tokens carrying text, a quadrilateral
box, a confidence, and a line id. `transcribe` validates every response
(boxes inside the page, confidences in [0, 1]) and fixes reading order, so
downstream stages can trust transcripts regardless of the engine behind
them.
"""

from __future__ import annotations

import base64
import io
import json
import statistics
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from PIL import Image

from .documents import PageImage
from .errors import ProtocolError
from .wire import post_json

Point = tuple[float, float]
Box = tuple[Point, Point, Point, Point]  # clockwise from top-left


@dataclass(frozen=True)
class OcrToken:
    text: str
    box: Box
    confidence: float
    line_id: Optional[int] = None
    language: Optional[str] = None


@dataclass(frozen=True)
class PageTranscript:
    page_no: int
    tokens: tuple[OcrToken, ...]
    full_text: str
    mean_confidence: float

    @classmethod
    def from_tokens(cls, page_no: int, tokens: Sequence[OcrToken]) -> "PageTranscript":
        """Build a transcript in reading order (line_id, then leftmost x)."""
        toks = list(tokens)
        if toks and any(t.line_id is None for t in toks):
            toks = _assign_line_ids(toks)
        toks.sort(key=lambda t: (t.line_id, _leftmost_x(t.box)))
        lines: dict[int, list[str]] = {}
        for t in toks:
            lines.setdefault(t.line_id, []).append(t.text)  # type: ignore[arg-type]
        full_text = "\n".join(" ".join(ws) for _, ws in sorted(lines.items()))
        mean_conf = (sum(t.confidence for t in toks) / len(toks)) if toks else 0.0
        return cls(page_no=page_no, tokens=tuple(toks),
                   full_text=full_text, mean_confidence=mean_conf)


class OcrBackend(Protocol):
    def recognize(self, page: PageImage, languages: Sequence[str]) -> list[OcrToken]:
        ...


def _leftmost_x(box: Box) -> float:
    return min(p[0] for p in box)


def _vcenter(box: Box) -> float:
    return sum(p[1] for p in box) / 4.0


def _height(box: Box) -> float:
    ys = [p[1] for p in box]
    return max(ys) - min(ys)


def _assign_line_ids(tokens: list[OcrToken]) -> list[OcrToken]:
    """Cluster tokens into lines by vertical center; the gap threshold is
    the median token height."""
    order = sorted(range(len(tokens)), key=lambda i: _vcenter(tokens[i].box))
    med_h = statistics.median(_height(tokens[i].box) for i in order) or 1.0
    out: list[Optional[OcrToken]] = [None] * len(tokens)
    line = 0
    prev_c: Optional[float] = None
    for i in order:
        c = _vcenter(tokens[i].box)
        if prev_c is not None and (c - prev_c) > med_h:
            line += 1
        prev_c = c
        t = tokens[i]
        out[i] = OcrToken(text=t.text, box=t.box, confidence=t.confidence,
                          line_id=line, language=t.language)
    return [t for t in out if t is not None]


def _segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool:
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def validate_token(token: OcrToken, page: PageImage) -> None:
    """Reject invariant-violating tokens: bad confidence, out-of-bounds or
    self-intersecting boxes."""
    if not (0.0 <= token.confidence <= 1.0):
        raise ProtocolError(
            f"token {token.text!r}: confidence {token.confidence} outside [0, 1]"
        )
    if len(token.box) != 4:
        raise ProtocolError(f"token {token.text!r}: box must have 4 points")
    for x, y in token.box:
        if not (0 <= x <= page.width_px and 0 <= y <= page.height_px):
            raise ProtocolError(
                f"token {token.text!r}: box point ({x}, {y}) outside "
                f"{page.width_px}x{page.height_px} page"
            )
    p0, p1, p2, p3 = token.box
    if _segments_cross(p0, p1, p2, p3) or _segments_cross(p1, p2, p3, p0):
        raise ProtocolError(f"token {token.text!r}: box is self-intersecting")


def transcribe(backend: OcrBackend, page: PageImage,
               languages: Sequence[str]) -> PageTranscript:
    """Run OCR on a page and return a validated, reading-ordered transcript."""
    if not languages:
        raise ValueError("languages must be non-empty")
    tokens = backend.recognize(page, languages)
    for t in tokens:
        validate_token(t, page)
    return PageTranscript.from_tokens(page.page_no, tokens)


def filter_tokens(t: PageTranscript, min_confidence: float) -> PageTranscript:
    """Drop tokens under the confidence floor; text and mean are recomputed."""
    if not (0.0 <= min_confidence <= 1.0):
        raise ValueError(f"min_confidence must lie in [0, 1], got {min_confidence}")
    kept = [tok for tok in t.tokens if tok.confidence >= min_confidence]
    return PageTranscript.from_tokens(t.page_no, kept)


# --- image <-> PNG helpers shared with the wire protocols ---------------------

def page_to_png_bytes(page: PageImage) -> bytes:
    arr = page.to_array()
    mode = "L" if page.channels == 1 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_array(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        out = im.convert("L") if im.mode in ("1", "L") else im.convert("RGB")
        return np.asarray(out, dtype=np.uint8)


# --- HTTP wire client ---------------------------------------------------------

class HttpOcrBackend:
    """Client for the POST /ocr wire protocol.

    Concurrency is bounded by an in-flight semaphore of the configured pool
    size; transport failures are retried by the shared wire layer.
    """

    def __init__(self, endpoint: str, pool_size: int = 4, retries: int = 2,
                 timeout_s: float = 30.0):
        self.url = endpoint.rstrip("/") + "/ocr"
        self.retries = retries
        self.timeout_s = timeout_s
        self._sem = threading.Semaphore(pool_size)

    def recognize(self, page: PageImage, languages: Sequence[str]) -> list[OcrToken]:
        payload = {
            "image_png_b64": base64.b64encode(page_to_png_bytes(page)).decode("ascii"),
            "languages": list(languages),
        }
        body = post_json(self.url, payload, timeout_s=self.timeout_s,
                         retries=self.retries, semaphore=self._sem)
        return parse_wire_tokens(body)


def parse_wire_tokens(body: dict) -> list[OcrToken]:
    """Decode the /ocr response object into tokens (shape errors -> ProtocolError)."""
    raw = body.get("tokens")
    if not isinstance(raw, list):
        raise ProtocolError(f"/ocr response missing 'tokens' list: {str(body)[:200]}")
    tokens = []
    for i, obj in enumerate(raw):
        try:
            box = tuple((float(x), float(y)) for x, y in obj["box"])
            if len(box) != 4:
                raise ValueError("box needs 4 points")
            tokens.append(OcrToken(
                text=str(obj["text"]),
                box=box,  # type: ignore[arg-type]
                confidence=float(obj["confidence"]),
                line_id=int(obj["line_id"]) if obj.get("line_id") is not None else None,
                language=obj.get("language"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/ocr token #{i} malformed: {json.dumps(obj)[:200]}") from exc
    return tokens


# --- deterministic synthetic backend ------------------------------------------

SIGNATURE_GRID = 12
# loose: residual skew (up to ~10 degrees) distorts the fingerprint; the
# threshold only rejects pages far from every registration
MATCH_THRESHOLD = 0.25
ROTATED_CONFIDENCE_FACTOR = 0.2
_INK_LEVEL = 128


def ink_signature(arr: np.ndarray, grid: int = SIGNATURE_GRID) -> Optional[np.ndarray]:
    """Scale-invariant ink fingerprint: per-cell ink fraction over the
    content bounding box. None when the page carries no ink."""
    if arr.ndim == 3:
        arr = arr.mean(axis=2).astype(np.uint8)
    mask = arr < _INK_LEVEL
    if not mask.any():
        return None
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    sub = mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    h, w = sub.shape
    sig = np.zeros((grid, grid), dtype=np.float64)
    for i in range(grid):
        r0, r1 = h * i // grid, h * (i + 1) // grid
        if r1 <= r0:
            continue
        for j in range(grid):
            c0, c1 = w * j // grid, w * (j + 1) // grid
            if c1 <= c0:
                continue
            cell = sub[r0:r1, c0:c1]
            sig[i, j] = cell.mean()
    return sig


def _rotate_point_ccw90(x: float, y: float, w: int, h: int) -> tuple[float, float, int, int]:
    """Rotate a point 90 degrees counterclockwise (as displayed); returns the
    new point and the new frame dims."""
    return y, (w - 1) - x, h, w


@dataclass(frozen=True)
class PlantedPage:
    key: str
    width: int
    height: int
    signature: np.ndarray
    tokens: tuple[OcrToken, ...]


class SyntheticOcrBackend:
    """Deterministic test double for the OCR contract.

    Pages are registered with their rendered image; queries are matched by
    ink fingerprint against every registered page at all four coarse
    rotations. A match at a non-upright rotation returns the planted tokens
    with confidence scaled down by the rotated factor; an unknown page
    yields an empty transcript.
    """

    def __init__(self, grid: int = SIGNATURE_GRID,
                 match_threshold: float = MATCH_THRESHOLD,
                 rotated_confidence_factor: float = ROTATED_CONFIDENCE_FACTOR):
        self.grid = grid
        self.match_threshold = match_threshold
        self.rotated_confidence_factor = rotated_confidence_factor
        self._pages: list[PlantedPage] = []

    def register(self, key: str, image: np.ndarray,
                 tokens: Sequence[OcrToken]) -> None:
        sig = ink_signature(image, self.grid)
        if sig is None:
            raise ValueError(f"planted page {key!r} has no ink to fingerprint")
        h, w = image.shape[:2]
        self._pages.append(PlantedPage(key=key, width=w, height=h,
                                       signature=sig, tokens=tuple(tokens)))

    def recognize(self, page: PageImage, languages: Sequence[str]) -> list[OcrToken]:
        sig = ink_signature(page.to_gray().to_array(), self.grid)
        if sig is None:
            return []
        best: Optional[tuple[float, int, PlantedPage]] = None
        for planted in self._pages:
            for k in range(4):
                d = float(np.abs(sig - np.rot90(planted.signature, k)).mean())
                if best is None or d < best[0]:
                    best = (d, k, planted)
        if best is None or best[0] > self.match_threshold:
            return []
        _, k, planted = best
        return self._emit(planted, k, page)

    def _emit(self, planted: PlantedPage, k: int, page: PageImage) -> list[OcrToken]:
        factor = 1.0 if k == 0 else self.rotated_confidence_factor
        out = []
        for tok in planted.tokens:
            pts = []
            for x, y in tok.box:
                w, h = planted.width, planted.height
                for _ in range(k):
                    x, y, w, h = _rotate_point_ccw90(x, y, w, h)
                sx = page.width_px / w
                sy = page.height_px / h
                pts.append((min(max(x * sx, 0.0), page.width_px),
                            min(max(y * sy, 0.0), page.height_px)))
            out.append(OcrToken(text=tok.text, box=tuple(pts),  # type: ignore[arg-type]
                                confidence=tok.confidence * factor,
                                line_id=tok.line_id, language=tok.language))
        return out

    # --- persistence ----------------------------------------------------

    def to_spec(self) -> dict:
        return {
            "grid": self.grid,
            "match_threshold": self.match_threshold,
            "rotated_confidence_factor": self.rotated_confidence_factor,
            "pages": [
                {
                    "key": p.key,
                    "width": p.width,
                    "height": p.height,
                    "signature": p.signature.tolist(),
                    "tokens": [
                        {
                            "text": t.text,
                            "box": [[x, y] for x, y in t.box],
                            "confidence": t.confidence,
                            "line_id": t.line_id,
                            "language": t.language,
                        }
                        for t in p.tokens
                    ],
                }
                for p in self._pages
            ],
        }

    def save_spec(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_spec()), encoding="utf-8")

    @classmethod
    def from_spec(cls, spec: dict | str | Path) -> "SyntheticOcrBackend":
        if not isinstance(spec, dict):
            spec = json.loads(Path(spec).read_text(encoding="utf-8"))
        backend = cls(
            grid=int(spec.get("grid", SIGNATURE_GRID)),
            match_threshold=float(spec.get("match_threshold", MATCH_THRESHOLD)),
            rotated_confidence_factor=float(
                spec.get("rotated_confidence_factor", ROTATED_CONFIDENCE_FACTOR)
            ),
        )
        for p in spec.get("pages", []):
            tokens = tuple(
                OcrToken(
                    text=t["text"],
                    box=tuple((float(x), float(y)) for x, y in t["box"]),  # type: ignore[arg-type]
                    confidence=float(t["confidence"]),
                    line_id=t.get("line_id"),
                    language=t.get("language"),
                )
                for t in p["tokens"]
            )
            backend._pages.append(PlantedPage(
                key=p["key"], width=int(p["width"]), height=int(p["height"]),
                signature=np.asarray(p["signature"], dtype=np.float64),
                tokens=tokens,
            ))
        return backend


def synthetic_backend(corpus_spec: dict | str | Path) -> SyntheticOcrBackend:
    """Build the deterministic OCR test double from a planted-corpus spec."""
    return SyntheticOcrBackend.from_spec(corpus_spec)
