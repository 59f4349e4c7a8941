"""Document, page, and field data model, plus ingestion and page splitting.

A document is an ordered list of raster page images. Sources may be a
directory of page images (PNG/JPEG/TIFF, ordered by file name), a
multi-page TIFF, or a single image file. PDFs must be rasterized by an
external step before they reach this layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image

from .errors import EmptyDocumentError, IngestionError

MAX_PAGE_SIDE_PX = 20000

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff"}

# Default target field set. `background_summary` is the narrative branch;
# everything else is a tabular scalar.
SCALAR_FIELDS = ("year", "revenue", "profit", "dividends", "currency")
ALL_FIELDS = SCALAR_FIELDS + ("background_summary",)

VALUE_KINDS = ("integer", "money", "currency_code", "text")
UNIT_SCALES = (1, 1000, 1000000)


@dataclass(frozen=True)
class PageImage:
    """A single raster page; pixels are a row-major byte buffer."""

    page_no: int
    width_px: int
    height_px: int
    channels: int
    pixels: bytes
    dpi: Optional[int] = None

    def __post_init__(self):
        if self.page_no < 1:
            raise ValueError(f"page_no must be >= 1, got {self.page_no}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("page dimensions must be positive")
        if self.width_px > MAX_PAGE_SIDE_PX or self.height_px > MAX_PAGE_SIDE_PX:
            raise ValueError(
                f"page {self.width_px}x{self.height_px} exceeds "
                f"{MAX_PAGE_SIDE_PX}px guard"
            )
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width_px * self.height_px * self.channels
        if len(self.pixels) != expected:
            raise ValueError(
                f"pixel buffer has {len(self.pixels)} bytes, expected {expected}"
            )

    def to_array(self) -> np.ndarray:
        """View the pixel buffer as (H, W) or (H, W, 3) uint8."""
        arr = np.frombuffer(self.pixels, dtype=np.uint8)
        if self.channels == 1:
            return arr.reshape(self.height_px, self.width_px)
        return arr.reshape(self.height_px, self.width_px, self.channels)

    @classmethod
    def from_array(cls, arr: np.ndarray, page_no: int, dpi: Optional[int] = None) -> "PageImage":
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 array, got {arr.dtype}")
        if arr.ndim == 2:
            channels = 1
        elif arr.ndim == 3 and arr.shape[2] == 3:
            channels = 3
        else:
            raise ValueError(f"unsupported array shape {arr.shape}")
        h, w = arr.shape[:2]
        return cls(
            page_no=page_no,
            width_px=w,
            height_px=h,
            channels=channels,
            pixels=np.ascontiguousarray(arr).tobytes(),
            dpi=dpi,
        )

    def to_gray(self) -> "PageImage":
        """Grayscale copy via luma (0.299 R + 0.587 G + 0.114 B), rounded."""
        if self.channels == 1:
            return self
        rgb = self.to_array().astype(np.float64)
        luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
        gray = np.rint(luma).clip(0, 255).astype(np.uint8)
        return PageImage.from_array(gray, self.page_no, self.dpi)

    def to_rgb(self) -> "PageImage":
        if self.channels == 3:
            return self
        gray = self.to_array()
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
        return PageImage.from_array(rgb, self.page_no, self.dpi)


@dataclass(frozen=True)
class Document:
    """A scanned document: ordered pages plus identity metadata."""

    doc_id: str
    pages: tuple[PageImage, ...]
    language_hint: Optional[str] = None
    source_path: str = ""

    def __post_init__(self):
        if not self.pages:
            raise EmptyDocumentError(f"document {self.doc_id!r} has no pages")
        for i, page in enumerate(self.pages, start=1):
            if page.page_no != i:
                raise ValueError(
                    f"page numbers must be contiguous from 1; "
                    f"position {i} has page_no {page.page_no}"
                )

    @property
    def n_pages(self) -> int:
        return len(self.pages)


@dataclass(frozen=True)
class FieldSpec:
    """A target field: its category, value kind, and retrieval keywords."""

    name: str
    category: str  # "tabular" | "narrative"
    value_kind: str
    keywords: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.category not in ("tabular", "narrative"):
            raise ValueError(f"bad category {self.category!r}")
        if self.value_kind not in VALUE_KINDS:
            raise ValueError(f"bad value_kind {self.value_kind!r}")
        if (self.category == "narrative") != (self.name == "background_summary"):
            raise ValueError(
                "narrative category is reserved for background_summary"
            )
        if not any(len(kws) > 0 for kws in self.keywords.values()):
            raise ValueError(f"field {self.name!r} has no keywords in any language")

    def keywords_for(self, language: Optional[str]) -> tuple[str, ...]:
        """Keywords for a language tag, falling back to English."""
        if language:
            base = language.split("-")[0].lower()
            if base in self.keywords and self.keywords[base]:
                return self.keywords[base]
        return self.keywords.get("en", ())


@dataclass(frozen=True)
class FieldValue:
    """A normalized extracted value with provenance back to its pages."""

    field: str
    raw_text: str
    value: object  # int, float, currency code, or text
    unit_scale: int = 1
    currency: Optional[str] = None
    provenance: tuple = ()  # of (page_no, token_indices)
    model_confidence: Optional[float] = None

    def __post_init__(self):
        if self.unit_scale not in UNIT_SCALES:
            raise ValueError(f"unit_scale must be one of {UNIT_SCALES}")


def _decode_image_file(path: Path) -> list[np.ndarray]:
    """Decode one image file into a list of uint8 frames (TIFF may be multi-page)."""
    try:
        with Image.open(path) as im:
            frames = []
            n = getattr(im, "n_frames", 1)
            for i in range(n):
                if n > 1:
                    im.seek(i)
                frame = im.convert("L") if im.mode in ("1", "L", "I;16", "I") else im.convert("RGB")
                frames.append(np.asarray(frame, dtype=np.uint8))
            return frames
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc


def _page_files(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def ingest(path: str | Path, doc_id: Optional[str] = None,
           language_hint: Optional[str] = None) -> Document:
    """Load a document from a directory of page images or a raster file.

    Pages are ordered by file name (directories) or frame order (multi-page
    TIFF) and numbered 1..n.
    """
    src = Path(path)
    if not src.exists():
        raise IngestionError(f"no such path: {src}")
    if doc_id is None:
        doc_id = src.stem if src.is_file() else src.name

    if src.is_dir():
        files = _page_files(src)
        if not files:
            raise EmptyDocumentError(f"no page images under {src}")
        frames = [frame for f in files for frame in _decode_image_file(f)]
    else:
        frames = _decode_image_file(src)

    if not frames:
        raise EmptyDocumentError(f"{src} decoded to zero pages")
    pages = tuple(
        PageImage.from_array(frame, page_no=i)
        for i, frame in enumerate(frames, start=1)
    )
    return Document(doc_id=doc_id, pages=pages,
                    language_hint=language_hint, source_path=str(src))


def ingest_paths(paths: list[str | Path], doc_id: str,
                 language_hint: Optional[str] = None) -> Document:
    """Load one logical document spread over several image files."""
    if not paths:
        raise EmptyDocumentError(f"document {doc_id!r} lists no source paths")
    frames: list[np.ndarray] = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise IngestionError(f"no such path: {p}")
        if p.is_dir():
            for f in _page_files(p):
                frames.extend(_decode_image_file(f))
        else:
            frames.extend(_decode_image_file(p))
    if not frames:
        raise EmptyDocumentError(f"document {doc_id!r} decoded to zero pages")
    pages = tuple(
        PageImage.from_array(frame, page_no=i)
        for i, frame in enumerate(frames, start=1)
    )
    return Document(doc_id=doc_id, pages=pages, language_hint=language_hint,
                    source_path=";".join(str(p) for p in paths))


def split_pages(doc: Document) -> Iterator[PageImage]:
    """Yield pages in ascending page_no order."""
    yield from doc.pages


@dataclass(frozen=True)
class ManifestEntry:
    doc_id: str
    paths: tuple[str, ...]
    language_hint: Optional[str] = None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest: one {"doc_id", "paths", "language_hint"} per line.

    doc_id defaults to the first path's stem; duplicate ids get a numeric
    suffix so every id is unique within the run.
    """
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    manifest = Path(path)
    if not manifest.exists():
        raise IngestionError(f"no such manifest: {manifest}")
    for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{manifest}:{line_no}: bad JSON: {exc}") from exc
        paths = obj.get("paths") or []
        if not paths:
            raise IngestionError(f"{manifest}:{line_no}: entry lists no paths")
        doc_id = obj.get("doc_id") or Path(paths[0]).stem
        if doc_id in seen:
            seen[doc_id] += 1
            doc_id = f"{doc_id}-{seen[doc_id]}"
        seen.setdefault(doc_id, 0)
        entries.append(ManifestEntry(
            doc_id=doc_id,
            paths=tuple(str(p) for p in paths),
            language_hint=obj.get("language_hint"),
        ))
    return entries
