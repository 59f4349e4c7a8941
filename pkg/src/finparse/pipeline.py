"""End-to-end orchestration: manifest in, results JSONL and timing log out.

Documents run on a bounded worker pool; inside a document, page-level
preprocessing/OCR and field-level extraction fan out on their own bounded
pools, with index construction and merging as join barriers. Stage workers
only exchange immutable values, and all rows are buffered and written
sorted by doc_id by a single writer, so results are byte-identical for any
worker count.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import PipelineConfig
from .documents import FieldValue, ManifestEntry, PageImage, ingest_paths, read_manifest
from .errors import ConfigError
from .evaluate import DocTiming, write_timing_log
from .extraction import (BackgroundSummary, FieldOutcome, ScriptedVlmBackend,
                         HttpVlmBackend, StructuredOutput, build_prompt,
                         enforce_provenance_bounds, extract_field,
                         merge_results, render_overlay, summarize_background)
from .ocr import (HttpOcrBackend, PageTranscript, SyntheticOcrBackend,
                  filter_tokens, page_to_png_bytes, transcribe)
from .preprocess import PreprocessReport, preprocess_page
from .retrieval import RetrievalResult, build_index, rank_pages, select_document_pages


def build_ocr_backend(cfg: PipelineConfig):
    if cfg.ocr.backend == "http":
        return HttpOcrBackend(cfg.ocr.endpoint, pool_size=cfg.ocr.pool_size,
                              retries=cfg.ocr.retries, timeout_s=cfg.ocr.timeout_s)
    if cfg.ocr.corpus_spec is None:
        return SyntheticOcrBackend()  # recognizes nothing: empty transcripts
    return SyntheticOcrBackend.from_spec(cfg.ocr.corpus_spec)


def build_vlm_backend(cfg: PipelineConfig):
    if cfg.vlm.backend == "http":
        return HttpVlmBackend(cfg.vlm.endpoint, pool_size=cfg.vlm.pool_size,
                              retries=cfg.vlm.retries, timeout_s=cfg.vlm.timeout_s)
    if cfg.vlm.script is None:
        return ScriptedVlmBackend([])
    return ScriptedVlmBackend.from_script(cfg.vlm.script)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        dt = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        dt = datetime.now(tz=timezone.utc)
    return dt.isoformat()


def _serialize_field_value(fv: Optional[FieldValue],
                           transcripts: dict[int, PageTranscript]) -> dict:
    if fv is None:
        return {"not_found": True}
    provenance = []
    for page_no, token_indices in fv.provenance:
        entry: dict = {"page_no": page_no, "token_indices": list(token_indices)}
        t = transcripts.get(page_no)
        if t is not None:
            entry["tokens"] = [
                {
                    "text": t.tokens[i].text,
                    "box": [[x, y] for x, y in t.tokens[i].box],
                    "confidence": t.tokens[i].confidence,
                }
                for i in token_indices if i < len(t.tokens)
            ]
        provenance.append(entry)
    return {
        "raw_text": fv.raw_text,
        "value": fv.value,
        "unit_scale": fv.unit_scale,
        "currency": fv.currency,
        "provenance": provenance,
        "model_confidence": fv.model_confidence,
    }


@dataclasses.dataclass
class ProcessedDoc:
    row: dict
    timing: Optional[DocTiming]
    retrieval_rows: list[dict]
    failed: bool


def process_document(entry: ManifestEntry, cfg: PipelineConfig, ocr_backend,
                     vlm_backend,
                     dump_preprocess: Optional[Path] = None) -> ProcessedDoc:
    """Run one document through the full pipeline; failures are isolated."""
    try:
        return _process_document(entry, cfg, ocr_backend, vlm_backend, dump_preprocess)
    except Exception as exc:  # per-document isolation by contract
        row = {
            "doc_id": entry.doc_id,
            "timestamp": _timestamp(),
            "pipeline_version": __version__,
            "failed": True,
            "error": f"{type(exc).__name__}: {exc}",
        }
        return ProcessedDoc(row=row, timing=None, retrieval_rows=[], failed=True)


def _process_document(entry: ManifestEntry, cfg: PipelineConfig, ocr_backend,
                      vlm_backend, dump_preprocess: Optional[Path]) -> ProcessedDoc:
    doc = ingest_paths(list(entry.paths), entry.doc_id, entry.language_hint)
    language = entry.language_hint
    languages = list(cfg.ocr.languages)
    stage_seconds: dict[str, float] = {}

    # preprocess pages (parallel fan-out, barrier)
    t0 = time.perf_counter()
    pool_size = min(cfg.ocr.pool_size, doc.n_pages)
    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        prepped: list[tuple[PageImage, PreprocessReport]] = list(pool.map(
            lambda p: preprocess_page(p, ocr_backend, cfg.preprocess, languages),
            doc.pages,
        ))
    stage_seconds["preprocess"] = time.perf_counter() - t0

    if dump_preprocess is not None:
        _dump_preprocess(dump_preprocess, doc, prepped)

    # transcribe (parallel fan-out, barrier)
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        transcripts: list[PageTranscript] = list(pool.map(
            lambda q: transcribe(ocr_backend, q[0], languages),
            prepped,
        ))
    stage_seconds["ocr"] = time.perf_counter() - t0

    by_page_no = {t.page_no: t for t in transcripts}
    pages_by_no = {p.page_no: p for p, _ in prepped}

    # index + rank (barrier: all pages present before any query)
    t0 = time.perf_counter()
    retrieval_transcripts = [
        filter_tokens(t, cfg.ocr.min_confidence_retrieval) for t in transcripts
    ]
    index = build_index(doc.doc_id, retrieval_transcripts,
                        k1=cfg.retrieval.k1, b=cfg.retrieval.b, language=language)
    results: list[RetrievalResult] = [
        rank_pages(index, spec, language, top_k=cfg.retrieval.top_k)
        for spec in cfg.fields
    ]
    retained_union, reduction_ratio = select_document_pages(results, doc.n_pages)
    results = [dataclasses.replace(r, reduction_ratio=reduction_ratio) for r in results]
    stage_seconds["retrieval"] = time.perf_counter() - t0

    warnings: list[str] = []
    if not retained_union:
        warnings.append("retrieval retained no pages for any field")

    # per-field extraction (parallel fan-out, bounded by the VLM pool)
    t0 = time.perf_counter()
    by_field = {r.field: r for r in results}

    def _req_pages(r: RetrievalResult):
        pairs = []
        for page_no in r.retained:  # BM25 rank order
            page = pages_by_no[page_no]
            transcript = by_page_no[page_no]
            overlay = render_overlay(page.to_rgb(), transcript,
                                     cfg.ocr.min_confidence_overlay)
            pairs.append((overlay, transcript))
        return pairs

    def _run_field(spec) -> FieldOutcome:
        r = by_field[spec.name]
        if not r.retained:
            return FieldOutcome(spec.name, None,
                                (f"{spec.name}: no pages retrieved",))
        req = build_prompt(spec, _req_pages(r), language, cfg.templates_dir,
                           cfg.extraction.max_summary_chars)
        outcome = extract_field(vlm_backend, req, cfg.vlm.max_tokens)
        return enforce_provenance_bounds(outcome, doc.n_pages)

    scalar_specs = [s for s in cfg.fields if s.category == "tabular"]
    narrative_specs = [s for s in cfg.fields if s.category == "narrative"]
    with ThreadPoolExecutor(max_workers=min(cfg.vlm.pool_size, max(1, len(scalar_specs)))) as pool:
        outcomes = list(pool.map(_run_field, scalar_specs))

    background: Optional[BackgroundSummary] = None
    for spec in narrative_specs:
        r = by_field[spec.name]
        if not r.retained:
            outcomes.append(FieldOutcome(spec.name, None,
                                         (f"{spec.name}: no pages retrieved",)))
            continue
        req = build_prompt(spec, _req_pages(r), language, cfg.templates_dir,
                           cfg.extraction.max_summary_chars)
        background, bg_warnings = summarize_background(
            vlm_backend, req, cfg.vlm.max_tokens, cfg.extraction)
        outcomes.append(FieldOutcome(spec.name, None, tuple(bg_warnings)))
    stage_seconds["extraction"] = time.perf_counter() - t0

    # merge (join barrier)
    t0 = time.perf_counter()
    scalar_order = [s.name for s in cfg.fields if s.category == "tabular"]
    merged: StructuredOutput = merge_results(
        [o for o in outcomes if o.field in scalar_order],
        doc.doc_id, scalar_order, background=background,
        extra_warnings=warnings + [
            w for o in outcomes if o.field not in scalar_order for w in o.warnings
        ],
    )
    stage_seconds["merge"] = time.perf_counter() - t0

    row = {
        "doc_id": doc.doc_id,
        "timestamp": _timestamp(),
        "pipeline_version": __version__,
        "n_pages": doc.n_pages,
        "retained_pages": list(retained_union),
        "reduction_ratio": reduction_ratio,
        "fields": {
            name: _serialize_field_value(merged.fields[name], by_page_no)
            for name in scalar_order
        },
        "background_summary": (
            {"text": background.text, "pages": list(background.pages)}
            if background is not None else None
        ),
        "warnings": list(merged.warnings),
        "failed": False,
    }
    retrieval_rows = [
        {
            "doc_id": doc.doc_id,
            "field": r.field,
            "ranked": [[p, s] for p, s in r.ranked],
            "retained": list(r.retained),
            "reduction_ratio": r.reduction_ratio,
        }
        for r in results
    ]
    timing = DocTiming(doc_id=doc.doc_id, pages=doc.n_pages,
                       seconds=sum(stage_seconds.values()),
                       stage_seconds=stage_seconds)
    return ProcessedDoc(row=row, timing=timing,
                        retrieval_rows=retrieval_rows, failed=False)


def _dump_preprocess(dump_dir: Path, doc, prepped) -> None:
    target = dump_dir / doc.doc_id
    target.mkdir(parents=True, exist_ok=True)
    for original, (after, report) in zip(doc.pages, prepped):
        n = original.page_no
        (target / f"page_{n:04d}_before.png").write_bytes(page_to_png_bytes(original))
        (target / f"page_{n:04d}_after.png").write_bytes(page_to_png_bytes(after))
        (target / f"page_{n:04d}_report.json").write_text(
            json.dumps(report.to_dict(), indent=2), encoding="utf-8")


@dataclasses.dataclass
class RunSummary:
    results_path: Path
    timing_path: Path
    retrieval_dump_path: Optional[Path]
    n_docs: int
    n_failed: int
    wall_clock_s: float
    timings: list[DocTiming]
    reduction_ratios: list[float]


def run_manifest(manifest_path: str | Path, cfg: PipelineConfig,
                 out_path: str | Path, overwrite: bool = False,
                 dump_preprocess: Optional[str | Path] = None,
                 dump_retrieval: bool = False) -> RunSummary:
    """Process every manifest document and persist results + timing log."""
    out = Path(out_path)
    if out.exists() and not overwrite:
        raise ConfigError(f"{out} exists; pass --overwrite to replace it")
    entries = read_manifest(manifest_path)
    if not entries:
        raise ConfigError(f"manifest {manifest_path} lists no documents")
    ocr_backend = build_ocr_backend(cfg)
    vlm_backend = build_vlm_backend(cfg)
    dump_dir = Path(dump_preprocess) if dump_preprocess else None

    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=min(cfg.workers, len(entries))) as pool:
        processed = list(pool.map(
            lambda e: process_document(e, cfg, ocr_backend, vlm_backend, dump_dir),
            entries,
        ))
    wall = time.perf_counter() - t0

    processed.sort(key=lambda p: p.row["doc_id"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for p in processed:
            fh.write(json.dumps(p.row, ensure_ascii=False) + "\n")

    timing_path = out.with_suffix(".timing.csv")
    timings = [p.timing for p in processed if p.timing is not None]
    write_timing_log(timing_path, timings, wall)

    retrieval_path: Optional[Path] = None
    if dump_retrieval:
        retrieval_path = Path(str(out) + ".retrieval.jsonl")
        with open(retrieval_path, "w", encoding="utf-8") as fh:
            for p in processed:
                for row in p.retrieval_rows:
                    fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    ratios = [p.row["reduction_ratio"] for p in processed if not p.failed]
    return RunSummary(
        results_path=out,
        timing_path=timing_path,
        retrieval_dump_path=retrieval_path,
        n_docs=len(processed),
        n_failed=sum(1 for p in processed if p.failed),
        wall_clock_s=wall,
        timings=timings,
        reduction_ratios=ratios,
    )


# --- results file helpers -------------------------------------------------------

def load_results(path: str | Path) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            rows.append(json.loads(line))
    return rows


@dataclasses.dataclass(frozen=True)
class PredictedDoc:
    doc_id: str
    fields: dict[str, Optional[FieldValue]]


def results_to_predictions(rows: Sequence[dict]) -> list[PredictedDoc]:
    """Rebuild evaluation-ready predictions from persisted result rows."""
    preds = []
    for row in rows:
        fields: dict[str, Optional[FieldValue]] = {}
        if not row.get("failed"):
            for name, obj in (row.get("fields") or {}).items():
                if obj.get("not_found"):
                    fields[name] = None
                else:
                    fields[name] = FieldValue(
                        field=name,
                        raw_text=obj.get("raw_text", ""),
                        value=obj.get("value"),
                        unit_scale=obj.get("unit_scale", 1),
                        currency=obj.get("currency"),
                        provenance=tuple(
                            (p["page_no"], tuple(p.get("token_indices", ())))
                            for p in obj.get("provenance", ())
                        ),
                        model_confidence=obj.get("model_confidence"),
                    )
        preds.append(PredictedDoc(doc_id=row["doc_id"], fields=fields))
    return preds
