"""Pipeline configuration: defaults, YAML loading, startup validation.

Every tunable named in the stage modules lives here so a single config
file drives the whole run. Missing sections fall back to defaults;
OCR_ENDPOINT / VLM_ENDPOINT environment variables override the endpoint
URLs last.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .documents import ALL_FIELDS, FieldSpec
from .errors import ConfigError

# (category, value_kind) per default target field
_FIELD_DEFS = {
    "year": ("tabular", "integer"),
    "revenue": ("tabular", "money"),
    "profit": ("tabular", "money"),
    "dividends": ("tabular", "money"),
    "currency": ("tabular", "currency_code"),
    "background_summary": ("narrative", "text"),
}


@dataclass(frozen=True)
class PreprocessConfig:
    target_long_side_px: int = 1600
    crop_margin_frac: float = 0.02
    blank_ink_frac: float = 0.001
    clahe_tiles: int = 8
    clahe_clip_limit: float = 2.0
    gaussian_sigma: float = 0.8
    apply_clahe: bool = True
    apply_denoise: bool = True
    hough_range_deg: float = 15.0
    hough_step_deg: float = 0.1
    edge_percentile: float = 90.0
    min_line_votes: int = 50
    min_candidate_lines: int = 3
    orientation_downscale_px: int = 256


@dataclass(frozen=True)
class OcrConfig:
    backend: str = "synthetic"  # "synthetic" | "http"
    endpoint: str = "http://localhost:8800"
    corpus_spec: Optional[str] = None
    pool_size: int = 4
    languages: tuple[str, ...] = ("en", "zh", "id")
    min_confidence_retrieval: float = 0.5
    min_confidence_overlay: float = 0.5
    retries: int = 2
    timeout_s: float = 30.0


@dataclass(frozen=True)
class VlmConfig:
    backend: str = "scripted"  # "scripted" | "http"
    endpoint: str = "http://localhost:8900"
    script: Optional[str] = None
    pool_size: int = 4
    max_tokens: int = 512
    retries: int = 2
    timeout_s: float = 60.0


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 3
    k1: float = 1.2
    b: float = 0.75


@dataclass(frozen=True)
class ExtractionConfig:
    max_summary_chars: int = 1200


@dataclass(frozen=True)
class PipelineConfig:
    fields: tuple[FieldSpec, ...] = ()
    keywords_file: Optional[str] = None
    templates_dir: Optional[str] = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    ocr: OcrConfig = field(default_factory=OcrConfig)
    vlm: VlmConfig = field(default_factory=VlmConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    workers: int = 4

    def field_spec(self, name: str) -> FieldSpec:
        for spec in self.fields:
            if spec.name == name:
                return spec
        raise ConfigError(f"unknown field {name!r}")

    @property
    def scalar_fields(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.fields if f.category == "tabular")


def default_keywords_path() -> Path:
    return Path(str(resources.files("finparse").joinpath("data/keywords.yaml")))


def default_templates_dir() -> Path:
    return Path(str(resources.files("finparse").joinpath("data/templates")))


def load_keywords(path: Path) -> dict[str, dict[str, tuple[str, ...]]]:
    """Read the per-field, per-language keyword config."""
    if not path.exists():
        raise ConfigError(f"keywords file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError(f"keywords file {path} must map fields to languages")
    out: dict[str, dict[str, tuple[str, ...]]] = {}
    for fname, langs in raw.items():
        if not isinstance(langs, dict):
            raise ConfigError(f"keywords for {fname!r} must map language to list")
        out[fname] = {
            lang: tuple(str(k) for k in kws or [])
            for lang, kws in langs.items()
        }
    return out


def _build_field_specs(keywords: dict[str, dict[str, tuple[str, ...]]],
                       names: tuple[str, ...]) -> tuple[FieldSpec, ...]:
    specs = []
    for name in names:
        if name not in _FIELD_DEFS:
            raise ConfigError(f"field {name!r} has no definition")
        if name not in keywords or not any(keywords[name].values()):
            raise ConfigError(f"field {name!r} has no keywords configured")
        if not keywords[name].get("en"):
            raise ConfigError(
                f"field {name!r} needs English keywords (fallback language)"
            )
        category, kind = _FIELD_DEFS[name]
        specs.append(FieldSpec(name=name, category=category,
                               value_kind=kind, keywords=keywords[name]))
    return tuple(specs)


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return sec


def _coerce(cls, raw_section: dict, path_keys: tuple[str, ...] = ()):
    known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(raw_section) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(raw_section)
    if "languages" in kwargs:
        kwargs["languages"] = tuple(kwargs["languages"])
    return cls(**kwargs)


def load_config(path: Optional[str | Path] = None) -> PipelineConfig:
    """Load config from YAML (or pure defaults), validate, apply env overrides."""
    raw: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config root of {p} must be a mapping")
        base_dir = p.parent

    def _resolve(v: Optional[str]) -> Optional[str]:
        if v is None:
            return None
        q = Path(v)
        return str(q if q.is_absolute() else base_dir / q)

    pre = _coerce(PreprocessConfig, _section(raw, "preprocess"))
    ocr_sec = _section(raw, "ocr")
    ocr_sec["corpus_spec"] = _resolve(ocr_sec.get("corpus_spec"))
    ocr = _coerce(OcrConfig, ocr_sec)
    vlm_sec = _section(raw, "vlm")
    vlm_sec["script"] = _resolve(vlm_sec.get("script"))
    vlm = _coerce(VlmConfig, vlm_sec)
    retr = _coerce(RetrievalConfig, _section(raw, "retrieval"))
    extr = _coerce(ExtractionConfig, _section(raw, "extraction"))

    keywords_file = _resolve(raw.get("keywords_file")) or str(default_keywords_path())
    templates_dir = _resolve(raw.get("templates_dir")) or str(default_templates_dir())
    field_names = tuple(raw.get("fields") or ALL_FIELDS)
    workers = int(raw.get("workers", 4))

    keywords = load_keywords(Path(keywords_file))
    specs = _build_field_specs(keywords, field_names)

    cfg = PipelineConfig(
        fields=specs,
        keywords_file=keywords_file,
        templates_dir=templates_dir,
        preprocess=pre,
        ocr=ocr,
        vlm=vlm,
        retrieval=retr,
        extraction=extr,
        workers=workers,
    )
    cfg = _apply_env_overrides(cfg)
    validate_config(cfg)
    return cfg


def _apply_env_overrides(cfg: PipelineConfig) -> PipelineConfig:
    ocr_ep = os.environ.get("OCR_ENDPOINT")
    vlm_ep = os.environ.get("VLM_ENDPOINT")
    if ocr_ep:
        cfg = replace(cfg, ocr=replace(cfg.ocr, endpoint=ocr_ep))
    if vlm_ep:
        cfg = replace(cfg, vlm=replace(cfg.vlm, endpoint=vlm_ep))
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    """Fail fast on anything that would break mid-run."""
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.ocr.pool_size < 1 or cfg.vlm.pool_size < 1:
        raise ConfigError("backend pool sizes must be >= 1")
    if cfg.retrieval.top_k < 1:
        raise ConfigError("retrieval top_k must be >= 1")
    if not (0.0 <= cfg.ocr.min_confidence_retrieval <= 1.0):
        raise ConfigError("min_confidence_retrieval must lie in [0, 1]")
    if cfg.preprocess.target_long_side_px < 64:
        raise ConfigError("target_long_side_px must be >= 64")
    if not cfg.ocr.languages:
        raise ConfigError("ocr.languages must be non-empty")
    if not cfg.fields:
        raise ConfigError("no target fields configured")
    if cfg.ocr.backend not in ("synthetic", "http"):
        raise ConfigError(f"unknown ocr backend {cfg.ocr.backend!r}")
    if cfg.vlm.backend not in ("scripted", "http"):
        raise ConfigError(f"unknown vlm backend {cfg.vlm.backend!r}")
    if cfg.ocr.backend == "synthetic" and cfg.ocr.corpus_spec is not None:
        if not Path(cfg.ocr.corpus_spec).exists():
            raise ConfigError(f"ocr corpus_spec not found: {cfg.ocr.corpus_spec}")
    if cfg.vlm.backend == "scripted" and cfg.vlm.script is not None:
        if not Path(cfg.vlm.script).exists():
            raise ConfigError(f"vlm script not found: {cfg.vlm.script}")
    tdir = Path(cfg.templates_dir or "")
    if not tdir.is_dir():
        raise ConfigError(f"templates dir not found: {tdir}")
    for spec in cfg.fields:
        if not _template_exists(tdir, spec.name, "en"):
            raise ConfigError(
                f"missing prompt template for field {spec.name!r} (en)"
            )


def _template_exists(tdir: Path, fname: str, lang: str) -> bool:
    return (tdir / f"{fname}.{lang}.txt").exists()
