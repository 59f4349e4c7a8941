"""Per-field extraction through a pluggable vision-language backend.

For each target field the retained pages are rendered with token-box
overlays, embedded with their OCR text into a section-specific prompt, and
sent as one request; the structured reply is parsed, normalized, and
merged with provenance. A backend failure never aborts the document: the
field is reported not-found with a warning.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import re
import threading
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .config import ExtractionConfig
from .documents import FieldSpec, FieldValue, PageImage, UNIT_SCALES
from .errors import (ConfigError, FinparseError, NormalizationError,
                     ProtocolError, TransportError)
from .ocr import PageTranscript, page_to_png_bytes
from .wire import post_json

SCHEMA_KEYS = ("value", "unit_scale", "currency", "page_no", "quote")

HIGHLIGHT_RGB = (255, 64, 64)
HIGHLIGHT_GRAY = 0
STROKE_PX = 2

REPAIR_INSTRUCTION = (
    "\n\nYour previous reply could not be parsed. "
    "Reply again with only the JSON object and nothing else."
)

CURRENCY_ALIASES = {
    "idr": "IDR", "rp": "IDR", "rupiah": "IDR",
    "ribuan rupiah": "IDR", "juta rupiah": "IDR",
    "sgd": "SGD", "s$": "SGD", "singapore dollar": "SGD",
    "cny": "CNY", "rmb": "CNY", "yuan": "CNY", "人民币": "CNY", "元": "CNY",
    "usd": "USD", "us$": "USD",
    "myr": "MYR", "rm": "MYR", "ringgit": "MYR",
    "hkd": "HKD", "hk$": "HKD",
    "eur": "EUR", "€": "EUR",
}


@dataclass(frozen=True)
class ExtractionRequest:
    field: str
    prompt: str
    pages: tuple[tuple[PageImage, PageTranscript], ...]
    response_schema: dict

    def __post_init__(self):
        if not self.pages:
            raise ValueError(f"extraction request for {self.field!r} has no pages")


@dataclass(frozen=True)
class FieldOutcome:
    """One field's result: a FieldValue or a not-found marker, plus warnings."""

    field: str
    value: Optional[FieldValue]
    warnings: tuple[str, ...] = ()

    @property
    def found(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class BackgroundSummary:
    text: str
    pages: tuple[int, ...]


@dataclass(frozen=True)
class StructuredOutput:
    doc_id: str
    fields: dict[str, Optional[FieldValue]]  # None marks not-found
    background_summary: Optional[BackgroundSummary]
    warnings: tuple[str, ...] = ()


class VlmBackend(Protocol):
    def generate(self, prompt: str, images: Sequence[PageImage],
                 max_tokens: int) -> str:
        ...


# --- overlay rendering --------------------------------------------------------

def render_overlay(page: PageImage, transcript: PageTranscript,
                   min_confidence: float = 0.5) -> PageImage:
    """Copy of the page with token quadrilaterals outlined.

    Tokens under the confidence floor are skipped. RGB pages get the fixed
    highlight color; grayscale pages get a dark stroke. The input page is
    never mutated.
    """
    boxes = [t.box for t in transcript.tokens if t.confidence >= min_confidence]
    arr = page.to_array().copy()
    if not boxes:
        return PageImage.from_array(arr, page.page_no, page.dpi)
    mode = "L" if page.channels == 1 else "RGB"
    stroke = HIGHLIGHT_GRAY if page.channels == 1 else HIGHLIGHT_RGB
    im = Image.fromarray(arr, mode=mode)
    draw = ImageDraw.Draw(im)
    for box in boxes:
        pts = [(float(x), float(y)) for x, y in box]
        draw.line(pts + [pts[0]], fill=stroke, width=STROKE_PX)
    return PageImage.from_array(np.asarray(im, dtype=np.uint8), page.page_no, page.dpi)


# --- prompt construction ------------------------------------------------------

def _template_path(templates_dir: Path, field_name: str, language: Optional[str]) -> Path:
    if language:
        base = language.split("-")[0].lower()
        cand = templates_dir / f"{field_name}.{base}.txt"
        if cand.exists():
            return cand
    fallback = templates_dir / f"{field_name}.en.txt"
    if not fallback.exists():
        raise ConfigError(f"no prompt template for field {field_name!r} in {templates_dir}")
    return fallback


def _ocr_text_block(pages: Sequence[tuple[PageImage, PageTranscript]]) -> str:
    parts = []
    for page, transcript in pages:
        parts.append(f"[PAGE {page.page_no}]\n{transcript.full_text}")
    return "\n\n".join(parts)


class _Defaulting(dict):
    def __missing__(self, key):  # leave unknown placeholders intact
        return "{" + key + "}"


def build_prompt(spec: FieldSpec, pages: Sequence[tuple[PageImage, PageTranscript]],
                 language: Optional[str], templates_dir: str | Path,
                 max_summary_chars: int = 1200) -> ExtractionRequest:
    """Instantiate the field's prompt template over the retained pages."""
    tpath = _template_path(Path(templates_dir), spec.name, language)
    template = tpath.read_text(encoding="utf-8")
    subs = _Defaulting(
        field_name=spec.name,
        synonyms=", ".join(spec.keywords_for(language)),
        value_kind=spec.value_kind,
        schema_keys=", ".join(f'"{k}"' for k in SCHEMA_KEYS),
        ocr_text=_ocr_text_block(pages),
        max_chars=str(max_summary_chars),
    )
    prompt = template.format_map(subs)
    schema = {
        "value": spec.value_kind,
        "unit_scale": "integer",
        "currency": "string|null",
        "page_no": "integer",
        "quote": "string",
    }
    return ExtractionRequest(field=spec.name, prompt=prompt,
                             pages=tuple(pages), response_schema=schema)


# --- value normalization ------------------------------------------------------

_THIN_SPACES = "    "

_SCALE_PATTERNS = (
    (re.compile(r"'\s*000\s*[,.]\s*000"), 1000000),
    (re.compile(r"juta\s+rupiah", re.IGNORECASE), 1000000),
    (re.compile(r"in\s+millions|million[s]?\s+of", re.IGNORECASE), 1000000),
    (re.compile(r"'\s*000"), 1000),
    (re.compile(r"ribuan\s+rupiah", re.IGNORECASE), 1000),
    (re.compile(r"in\s+thousands|thousand[s]?\s+of", re.IGNORECASE), 1000),
)


def infer_unit_scale(text: str) -> Optional[int]:
    """Unit multiplier implied by column headers or phrases in OCR text
    (IDR'000, IDR'000,000, ribuan/juta rupiah, in thousands/millions)."""
    for pattern, scale in _SCALE_PATTERNS:
        if pattern.search(text):
            return scale
    return None


def map_currency(hint: Optional[str]) -> Optional[str]:
    if hint is None:
        return None
    key = str(hint).strip().lower()
    if key in CURRENCY_ALIASES:
        return CURRENCY_ALIASES[key]
    up = str(hint).strip().upper()
    if re.fullmatch(r"[A-Z]{3}", up):
        return up
    return None


def _clean_number(raw: str) -> Decimal:
    s = raw.strip()
    for ch in _THIN_SPACES:
        s = s.replace(ch, "")
    s = re.sub(r"[^0-9.,+-]", "", s)
    if not s:
        raise NormalizationError(f"no digits in {raw!r}")
    if "," in s and "." in s:
        if s.rindex(".") > s.rindex(","):
            s = s.replace(",", "")          # 1,234.56
        else:
            s = s.replace(".", "").replace(",", ".")  # 1.234,56
    elif "," in s:
        if re.fullmatch(r"[+-]?\d{1,3}(,\d{3})+", s):
            s = s.replace(",", "")          # 4,500 -> 4500
        else:
            s = s.replace(",", ".")         # 4,5 -> 4.5
    elif s.count(".") > 1:
        if re.fullmatch(r"[+-]?\d{1,3}(\.\d{3})+", s):
            s = s.replace(".", "")          # 1.234.567 -> 1234567
        else:
            raise NormalizationError(f"ambiguous separators in {raw!r}")
    try:
        return Decimal(s)
    except InvalidOperation as exc:
        raise NormalizationError(f"unparseable number {raw!r}") from exc


def normalize_value(raw_text: str, unit_scale_hint: Optional[int],
                    currency_hint: Optional[str],
                    value_kind: str) -> tuple[object, int, Optional[str]]:
    """Normalize a raw extracted string; returns (value, unit_scale, currency).

    Money values have the unit multiplier applied; years must be 4-digit
    integers in [1900, 2100]; currency codes are mapped through the alias
    table to ISO 4217.
    """
    scale = int(unit_scale_hint) if unit_scale_hint else 1
    if scale not in UNIT_SCALES:
        raise NormalizationError(f"unsupported unit_scale {scale}")
    currency = map_currency(currency_hint)

    if value_kind == "text":
        return raw_text.strip(), 1, currency

    if not raw_text or not raw_text.strip():
        raise NormalizationError(f"empty raw text for {value_kind} value")

    if value_kind == "integer":
        m = re.search(r"\b(\d{4})\b", raw_text)
        if not m:
            raise NormalizationError(f"no 4-digit year in {raw_text!r}")
        year = int(m.group(1))
        if not (1900 <= year <= 2100):
            raise NormalizationError(f"year {year} outside [1900, 2100]")
        return year, 1, currency

    if value_kind == "money":
        amount = _clean_number(raw_text) * scale
        as_int = int(amount)
        value: object = as_int if amount == as_int else float(amount)
        return value, scale, currency

    if value_kind == "currency_code":
        code = map_currency(raw_text)
        if code is None:
            raise NormalizationError(f"unknown currency {raw_text!r}")
        return code, 1, code

    raise NormalizationError(f"unknown value kind {value_kind!r}")


# --- reply parsing and field extraction ----------------------------------------

def _parse_reply(text: str) -> dict:
    """Parse the backend's flat JSON object; tolerates surrounding prose by
    extracting the first balanced object."""
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            return obj
    except json.JSONDecodeError:
        pass
    start = text.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start:i + 1])
                        if isinstance(obj, dict):
                            return obj
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    raise ValueError(f"no JSON object in reply: {text[:120]!r}")


def _provenance_for(reply_page: Optional[int], quote: Optional[str],
                    pages: Sequence[tuple[PageImage, PageTranscript]]) -> tuple:
    if reply_page is None:
        return ()
    for _, transcript in pages:
        if transcript.page_no == reply_page:
            idxs = tuple(
                i for i, tok in enumerate(transcript.tokens)
                if quote and quote in tok.text
            )
            return ((reply_page, idxs),)
    return ((reply_page, ()),)


def extract_field(backend: VlmBackend, req: ExtractionRequest,
                  max_tokens: int = 512) -> FieldOutcome:
    """Dispatch one field request; parse, validate, and normalize the reply.

    Parse failures get one repair retry; a second failure (or a transport
    failure after client retries) marks the field not-found with a warning
    rather than aborting the document.
    """
    images = [p for p, _ in req.pages]
    warnings: list[str] = []

    reply_obj: Optional[dict] = None
    prompt = req.prompt
    for attempt in range(2):
        try:
            text = backend.generate(prompt, images, max_tokens)
        except (TransportError, FinparseError) as exc:
            return FieldOutcome(req.field, None,
                                (f"{req.field}: backend failure: {exc}",))
        try:
            reply_obj = _parse_reply(text)
            break
        except ValueError:
            prompt = req.prompt + REPAIR_INSTRUCTION
    if reply_obj is None:
        return FieldOutcome(req.field, None,
                            (f"{req.field}: unparseable reply after repair retry",))

    if reply_obj.get("value") is None:
        return FieldOutcome(req.field, None, tuple(warnings))

    raw = str(reply_obj["value"])
    quote = reply_obj.get("quote")
    reply_page = reply_obj.get("page_no")
    scale_hint = reply_obj.get("unit_scale")
    if not scale_hint:
        scale_hint = infer_unit_scale(_ocr_text_block(req.pages))
    try:
        value, scale, currency = normalize_value(
            raw, scale_hint, reply_obj.get("currency"), req.response_schema["value"]
        )
    except NormalizationError as exc:
        return FieldOutcome(req.field, None, (f"{req.field}: {exc}",))

    retained_pages = {p.page_no for p, _ in req.pages}
    if reply_page is not None and reply_page not in retained_pages:
        warnings.append(
            f"{req.field}: cited page {reply_page} outside retained set"
        )
    confidence = reply_obj.get("confidence")
    fv = FieldValue(
        field=req.field,
        raw_text=str(quote) if quote is not None else raw,
        value=value,
        unit_scale=scale,
        currency=currency,
        provenance=_provenance_for(reply_page, quote, req.pages),
        model_confidence=float(confidence) if confidence is not None else None,
    )
    return FieldOutcome(req.field, fv, tuple(warnings))


def summarize_background(backend: VlmBackend, req: ExtractionRequest,
                         max_tokens: int = 512,
                         cfg: ExtractionConfig = ExtractionConfig()) -> tuple[Optional[BackgroundSummary], tuple[str, ...]]:
    """Free-text company-background summary over the retained pages."""
    images = [p for p, _ in req.pages]
    try:
        text = backend.generate(req.prompt, images, max_tokens)
    except (TransportError, FinparseError) as exc:
        return None, (f"background_summary: backend failure: {exc}",)
    text = text.strip()
    if not text:
        return None, ("background_summary: empty reply",)
    warnings: tuple[str, ...] = ()
    if len(text) > cfg.max_summary_chars:
        text = text[:cfg.max_summary_chars]
        warnings = (f"background_summary: reply truncated at {cfg.max_summary_chars} chars",)
    pages = tuple(p.page_no for p, _ in req.pages)
    return BackgroundSummary(text=text, pages=pages), warnings


def enforce_provenance_bounds(outcome: FieldOutcome, n_pages: int) -> FieldOutcome:
    """Drop provenance entries citing pages the document does not have.

    Provenance must always point at real pages; a model citing a
    nonexistent page keeps its value but loses the bogus reference, with a
    warning.
    """
    if outcome.value is None:
        return outcome
    bad = [p for p, _ in outcome.value.provenance if not (1 <= p <= n_pages)]
    if not bad:
        return outcome
    kept = tuple(e for e in outcome.value.provenance if 1 <= e[0] <= n_pages)
    fv = dataclasses.replace(outcome.value, provenance=kept)
    warning = (f"{outcome.field}: dropped provenance citing nonexistent "
               f"page(s) {bad}")
    return FieldOutcome(outcome.field, fv, outcome.warnings + (warning,))


def merge_results(outcomes: Sequence[FieldOutcome], doc_id: str,
                  field_order: Sequence[str],
                  background: Optional[BackgroundSummary] = None,
                  extra_warnings: Sequence[str] = ()) -> StructuredOutput:
    """Join per-field outcomes into one StructuredOutput.

    Every configured field appears exactly once (value or not-found);
    duplicates indicate a pipeline bug.
    """
    by_field: dict[str, FieldOutcome] = {}
    for o in outcomes:
        if o.field in by_field:
            raise FinparseError(f"duplicate result for field {o.field!r}")
        by_field[o.field] = o
    fields: dict[str, Optional[FieldValue]] = {}
    warnings = list(extra_warnings)
    for name in field_order:
        if name not in by_field:
            raise FinparseError(f"missing result for field {name!r}")
        fields[name] = by_field[name].value
        warnings.extend(by_field[name].warnings)
    extras = set(by_field) - set(field_order)
    if extras:
        raise FinparseError(f"results for unconfigured fields: {sorted(extras)}")
    return StructuredOutput(doc_id=doc_id, fields=fields,
                            background_summary=background,
                            warnings=tuple(warnings))


# --- backends -----------------------------------------------------------------

class HttpVlmBackend:
    """Client for the POST /extract wire protocol."""

    def __init__(self, endpoint: str, pool_size: int = 4, retries: int = 2,
                 timeout_s: float = 60.0):
        self.url = endpoint.rstrip("/") + "/extract"
        self.retries = retries
        self.timeout_s = timeout_s
        self._sem = threading.Semaphore(pool_size)

    def generate(self, prompt: str, images: Sequence[PageImage],
                 max_tokens: int) -> str:
        payload = {
            "prompt": prompt,
            "images_png_b64": [
                base64.b64encode(page_to_png_bytes(p)).decode("ascii") for p in images
            ],
            "max_tokens": max_tokens,
        }
        body = post_json(self.url, payload, timeout_s=self.timeout_s,
                         retries=self.retries, semaphore=self._sem)
        text = body.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"/extract response missing 'text': {str(body)[:200]}")
        return text


DEFAULT_NULL_REPLY = json.dumps(
    {"value": None, "unit_scale": 1, "currency": None, "page_no": None, "quote": None}
)


class ScriptedVlmBackend:
    """Deterministic VLM test double: replies are selected by prompt content.

    The script is a list of entries {"require": [substr, ...], "reply": str};
    the first entry whose substrings all appear in the prompt wins. With no
    match the default reply (a null-value object) is returned.
    """

    def __init__(self, entries: Sequence[dict], default_reply: str = DEFAULT_NULL_REPLY):
        self.entries = list(entries)
        self.default_reply = default_reply

    def generate(self, prompt: str, images: Sequence[PageImage],
                 max_tokens: int) -> str:
        for entry in self.entries:
            if all(s in prompt for s in entry.get("require", ())):
                return entry["reply"]
        return self.default_reply

    def to_script(self) -> dict:
        return {"entries": self.entries, "default_reply": self.default_reply}

    def save_script(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_script()), encoding="utf-8")

    @classmethod
    def from_script(cls, script: dict | str | Path) -> "ScriptedVlmBackend":
        if not isinstance(script, dict):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        return cls(entries=script.get("entries", []),
                   default_reply=script.get("default_reply", DEFAULT_NULL_REPLY))
