"""Field-level accuracy against ground truth, plus throughput/latency metrics.

Accuracy is micro-averaged over all (document, field) pairs; a macro
(per-document) average is emitted alongside. A not-found prediction
matches an absent gold value (calibrated abstention) and mismatches a
present one.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .documents import SCALAR_FIELDS, FieldValue
from .errors import EvalInputError

MONEY_REL_TOL = 1e-6


@dataclass(frozen=True)
class GroundTruth:
    """Expected values for the five scalar fields of one document.

    Money fields are {"amount": number, "currency": code|None}; absent
    fields are None (meaning: a correct system abstains).
    """

    doc_id: str
    fields: dict[str, object]

    def __post_init__(self):
        unknown = set(self.fields) - set(SCALAR_FIELDS)
        if unknown:
            raise EvalInputError(f"gold for {self.doc_id!r} has unknown fields {sorted(unknown)}")
        for name in SCALAR_FIELDS:
            self.fields.setdefault(name, None)


@dataclass(frozen=True)
class DocVerdicts:
    doc_id: str
    verdicts: dict[str, bool]

    @property
    def matched(self) -> int:
        return sum(self.verdicts.values())

    @property
    def total(self) -> int:
        return len(self.verdicts)


@dataclass(frozen=True)
class EvalReport:
    per_doc: dict[str, DocVerdicts]
    micro_accuracy: float
    macro_accuracy: float
    not_found_count: int

    def to_dict(self) -> dict:
        return {
            "micro_accuracy": self.micro_accuracy,
            "macro_accuracy": self.macro_accuracy,
            "not_found_count": self.not_found_count,
            "per_doc": {
                d: {
                    "matched": v.matched,
                    "total": v.total,
                    "verdicts": {f: ("match" if ok else "mismatch")
                                 for f, ok in v.verdicts.items()},
                }
                for d, v in self.per_doc.items()
            },
        }


def _money_equal(pred_value: object, pred_currency: Optional[str], gold: dict) -> bool:
    try:
        pv = float(pred_value)  # type: ignore[arg-type]
        gv = float(gold["amount"])
    except (TypeError, ValueError, KeyError):
        return False
    if not math.isclose(pv, gv, rel_tol=MONEY_REL_TOL, abs_tol=0.0):
        return False
    gold_ccy = gold.get("currency")
    if gold_ccy:
        return pred_currency == gold_ccy
    return True


def field_match(pred: Optional[FieldValue], gold: object, field_name: str) -> bool:
    """Verdict for one (prediction, gold) pair.

    Year: integer equality. Currency: ISO-code equality. Money: normalized
    amounts within 1e-6 relative tolerance and matching currency when the
    gold names one. A not-found prediction matches iff the gold is absent.
    """
    if gold is None:
        return pred is None
    if pred is None:
        return False
    if field_name == "year":
        try:
            return int(pred.value) == int(gold)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            return False
    if field_name == "currency":
        return isinstance(pred.value, str) and pred.value == gold
    if isinstance(gold, dict):
        return _money_equal(pred.value, pred.currency, gold)
    return False


def accuracy(preds: Sequence, golds: Sequence[GroundTruth]) -> EvalReport:
    """Micro- and macro-averaged field accuracy over aligned documents.

    A document with gold but no prediction counts every field as a
    mismatch. Duplicate ids on either side are input errors, as is an
    empty evaluation.
    """
    if not golds:
        raise EvalInputError("no gold documents to evaluate")
    gold_ids = [g.doc_id for g in golds]
    if len(set(gold_ids)) != len(gold_ids):
        raise EvalInputError("duplicate doc_id in gold")
    pred_ids = [p.doc_id for p in preds]
    if len(set(pred_ids)) != len(pred_ids):
        raise EvalInputError("duplicate doc_id in predictions")
    by_id = {p.doc_id: p for p in preds}

    per_doc: dict[str, DocVerdicts] = {}
    matched = 0
    total = 0
    not_found = 0
    doc_accs = []
    for gold in golds:
        pred = by_id.get(gold.doc_id)
        verdicts: dict[str, bool] = {}
        for name in SCALAR_FIELDS:
            pv = pred.fields.get(name) if pred is not None else None
            if pv is None:
                not_found += 1
            verdicts[name] = field_match(pv, gold.fields.get(name), name)
        dv = DocVerdicts(doc_id=gold.doc_id, verdicts=verdicts)
        per_doc[gold.doc_id] = dv
        matched += dv.matched
        total += dv.total
        doc_accs.append(dv.matched / dv.total)
    return EvalReport(
        per_doc=per_doc,
        micro_accuracy=matched / total,
        macro_accuracy=sum(doc_accs) / len(doc_accs),
        not_found_count=not_found,
    )


# --- ground-truth file --------------------------------------------------------

def read_gold(path: str | Path) -> list[GroundTruth]:
    """Read the JSON-lines gold file (one object per document)."""
    golds = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvalInputError(f"{path}:{line_no}: bad JSON: {exc}") from exc
        doc_id = obj.get("doc_id")
        if not doc_id:
            raise EvalInputError(f"{path}:{line_no}: missing doc_id")
        fields = {name: obj.get(name) for name in SCALAR_FIELDS}
        golds.append(GroundTruth(doc_id=doc_id, fields=fields))
    return golds


# --- throughput / latency metrics ----------------------------------------------

@dataclass(frozen=True)
class DocTiming:
    doc_id: str
    pages: int
    seconds: float
    stage_seconds: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class BenchMetrics:
    docs_per_hour_per_device: float
    latency_s_per_page: float
    mean_reduction_ratio: Optional[float]
    wall_clock_s: float
    total_pages: int
    total_docs: int
    device_count: int

    def to_dict(self) -> dict:
        return {
            "docs_per_hour_per_device": self.docs_per_hour_per_device,
            "latency_s_per_page": self.latency_s_per_page,
            "mean_reduction_ratio": self.mean_reduction_ratio,
            "wall_clock_s": self.wall_clock_s,
            "total_pages": self.total_pages,
            "total_docs": self.total_docs,
            "device_count": self.device_count,
        }


def bench(timings: Sequence[DocTiming], device_count: int,
          wall_clock_s: Optional[float] = None,
          reduction_ratios: Optional[Sequence[float]] = None) -> BenchMetrics:
    """Throughput and latency metrics from per-document timings.

    docs/h/device uses the run wall clock (defaults to the summed document
    latencies, exact for a single worker); latency per page is the
    wall-clock-weighted mean of per-document latency / page count.
    """
    if not timings:
        raise EvalInputError("no documents timed")
    if device_count < 1:
        raise EvalInputError("device_count must be >= 1")
    total_docs = len(timings)
    total_pages = sum(t.pages for t in timings)
    sum_latency = sum(t.seconds for t in timings)
    wall = wall_clock_s if wall_clock_s is not None else sum_latency
    if wall <= 0:
        raise EvalInputError("wall clock must be positive")
    docs_per_hour = total_docs / (wall / 3600.0) / device_count
    weighted = sum(t.seconds * (t.seconds / t.pages) for t in timings if t.pages > 0)
    latency_per_page = weighted / sum_latency if sum_latency > 0 else 0.0
    mean_ratio = None
    if reduction_ratios:
        mean_ratio = sum(reduction_ratios) / len(reduction_ratios)
    return BenchMetrics(
        docs_per_hour_per_device=docs_per_hour,
        latency_s_per_page=latency_per_page,
        mean_reduction_ratio=mean_ratio,
        wall_clock_s=wall,
        total_pages=total_pages,
        total_docs=total_docs,
        device_count=device_count,
    )


# --- timing log ----------------------------------------------------------------

RUN_ROW_ID = "__run__"
WALL_CLOCK_STAGE = "wall_clock"


def write_timing_log(path: str | Path, timings: Sequence[DocTiming],
                     wall_clock_s: float) -> None:
    """CSV rows (doc_id, stage, seconds, pages); one synthetic row records
    the run wall clock so metrics can be recomputed from the log alone."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["doc_id", "stage", "seconds", "pages"])
        for t in timings:
            for stage, secs in t.stage_seconds.items():
                w.writerow([t.doc_id, stage, repr(secs), t.pages])
        w.writerow([RUN_ROW_ID, WALL_CLOCK_STAGE,
                    repr(wall_clock_s), sum(t.pages for t in timings)])


def read_timing_log(path: str | Path) -> tuple[list[DocTiming], Optional[float]]:
    """Inverse of write_timing_log: per-doc timings plus the run wall clock."""
    stage_by_doc: dict[str, dict[str, float]] = {}
    pages_by_doc: dict[str, int] = {}
    wall: Optional[float] = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            doc_id = row["doc_id"]
            secs = float(row["seconds"])
            if doc_id == RUN_ROW_ID:
                wall = secs
                continue
            stage_by_doc.setdefault(doc_id, {})[row["stage"]] = secs
            pages_by_doc[doc_id] = int(row["pages"])
    timings = [
        DocTiming(doc_id=d, pages=pages_by_doc[d],
                  seconds=sum(stages.values()), stage_seconds=stages)
        for d, stages in stage_by_doc.items()
    ]
    return timings, wall
