"""Command-line interface: process, eval, bench, inspect, synth."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import load_config
from .errors import FinparseError
from .evaluate import bench as compute_bench
from .evaluate import read_gold, read_timing_log
from .pipeline import load_results, results_to_predictions, run_manifest
from . import evaluate


@click.group()
def main():
    """Multi-stage field extraction for scanned financial documents."""


@main.command("process")
@click.option("--manifest", "-m", required=True, type=click.Path(exists=True))
@click.option("--config", "-c", "config_path", type=click.Path(exists=True))
@click.option("--out", "-o", required=True, type=click.Path())
@click.option("--dump-preprocess", type=click.Path(), default=None,
              help="Directory for per-page before/after images and reports.")
@click.option("--dump-retrieval", is_flag=True,
              help="Write per-field ranked page lists next to the results.")
@click.option("--overwrite", is_flag=True, help="Replace an existing results file.")
def cmd_process(manifest, config_path, out, dump_preprocess, dump_retrieval, overwrite):
    """Run the full pipeline over a manifest of documents."""
    try:
        cfg = load_config(config_path)
        summary = run_manifest(manifest, cfg, out, overwrite=overwrite,
                               dump_preprocess=dump_preprocess,
                               dump_retrieval=dump_retrieval)
    except FinparseError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"processed {summary.n_docs} documents "
               f"({summary.n_failed} failed) in {summary.wall_clock_s:.2f}s")
    click.echo(f"results: {summary.results_path}")
    click.echo(f"timing log: {summary.timing_path}")
    if summary.retrieval_dump_path:
        click.echo(f"retrieval dump: {summary.retrieval_dump_path}")
    if summary.n_failed:
        sys.exit(1)


@main.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--gold", required=True, type=click.Path(exists=True))
@click.option("--json-out", type=click.Path(), default=None,
              help="Also write the full report as JSON.")
def cmd_eval(pred, gold, json_out):
    """Field-level accuracy of a results file against ground truth."""
    try:
        rows = load_results(pred)
        if not rows:
            raise click.ClickException(f"results file {pred} is empty")
        preds = results_to_predictions(rows)
        golds = read_gold(gold)
        report = evaluate.accuracy(preds, golds)
    except FinparseError as exc:
        raise click.ClickException(str(exc))

    header = f"{'doc_id':<24} {'matched':>8} {'total':>6}  verdicts"
    click.echo(header)
    click.echo("-" * len(header))
    for doc_id, dv in sorted(report.per_doc.items()):
        marks = " ".join(
            f"{name}:{'ok' if ok else 'X'}" for name, ok in dv.verdicts.items()
        )
        click.echo(f"{doc_id:<24} {dv.matched:>8} {dv.total:>6}  {marks}")
    click.echo("-" * len(header))
    click.echo(f"micro_accuracy: {report.micro_accuracy:.4f}")
    click.echo(f"macro_accuracy: {report.macro_accuracy:.4f}")
    click.echo(f"not_found_count: {report.not_found_count}")
    if json_out:
        Path(json_out).write_text(json.dumps(report.to_dict(), indent=2),
                                  encoding="utf-8")
        click.echo(f"report: {json_out}")


@main.command("bench")
@click.option("--manifest", "-m", required=True, type=click.Path(exists=True))
@click.option("--config", "-c", "config_path", type=click.Path(exists=True))
@click.option("--devices", "-d", default=1, show_default=True, type=int)
@click.option("--out", "-o", type=click.Path(), default=None,
              help="Results path (default: a temp file).")
def cmd_bench(manifest, config_path, devices, out):
    """Run the pipeline and report throughput/latency metrics."""
    import tempfile

    try:
        cfg = load_config(config_path)
        if out is None:
            out = str(Path(tempfile.mkdtemp(prefix="finparse-bench-")) / "results.jsonl")
        summary = run_manifest(manifest, cfg, out, overwrite=True)
        timings, wall = read_timing_log(summary.timing_path)
        metrics = compute_bench(timings, devices, wall_clock_s=wall,
                                reduction_ratios=summary.reduction_ratios)
    except FinparseError as exc:
        raise click.ClickException(str(exc))

    click.echo(f"documents: {metrics.total_docs}  pages: {metrics.total_pages}")
    click.echo(f"wall clock: {metrics.wall_clock_s:.3f}s on {devices} device(s)")
    click.echo(f"throughput: {metrics.docs_per_hour_per_device:.1f} docs/h/device")
    click.echo(f"latency: {metrics.latency_s_per_page:.4f} s/page")
    if metrics.mean_reduction_ratio is not None:
        click.echo(f"mean page-reduction ratio: {metrics.mean_reduction_ratio:.3f}")
    stage_totals: dict[str, float] = {}
    for t in timings:
        for stage, secs in t.stage_seconds.items():
            stage_totals[stage] = stage_totals.get(stage, 0.0) + secs
    click.echo("per-stage seconds (summed over documents):")
    for stage, secs in stage_totals.items():
        click.echo(f"  {stage:<12} {secs:.3f}")


@main.command("inspect")
@click.option("--results", required=True, type=click.Path(exists=True))
@click.option("--doc", "doc_id", required=True)
@click.option("--field", "field_name", required=True)
@click.option("--crop-from", type=click.Path(exists=True), default=None,
              help="Preprocess dump dir; writes an overlay crop of the provenance boxes.")
@click.option("--crop-out", type=click.Path(), default=None)
def cmd_inspect(results, doc_id, field_name, crop_from, crop_out):
    """Show an extracted field's value and its provenance."""
    rows = {r["doc_id"]: r for r in load_results(results)}
    row = rows.get(doc_id)
    if row is None:
        raise click.ClickException(f"no result row for doc {doc_id!r}")
    if row.get("failed"):
        raise click.ClickException(f"document {doc_id!r} failed: {row.get('error')}")
    if field_name == "background_summary":
        bg = row.get("background_summary")
        if bg is None:
            click.echo("background_summary: not found")
            _print_warnings(row, field_name)
            return
        click.echo(f"background_summary (pages {bg['pages']}):")
        click.echo(bg["text"])
        return
    fields = row.get("fields") or {}
    if field_name not in fields:
        raise click.ClickException(f"unknown field {field_name!r} for doc {doc_id!r}")
    obj = fields[field_name]
    if obj.get("not_found"):
        click.echo(f"{field_name}: not found")
        _print_warnings(row, field_name)
        return
    click.echo(f"{field_name}: {obj['value']}"
               + (f" {obj['currency']}" if obj.get("currency") else ""))
    click.echo(f"unit_scale: {obj.get('unit_scale')}")
    if obj.get("model_confidence") is not None:
        click.echo(f"model_confidence: {obj['model_confidence']}")
    for prov in obj.get("provenance", ()):
        click.echo(f"page {prov['page_no']}:")
        for tok in prov.get("tokens", ()):
            click.echo(f"  quote {tok['text']!r} (confidence {tok['confidence']})")
    if crop_from and crop_out:
        _write_overlay_crop(Path(crop_from), doc_id, obj, Path(crop_out))
        click.echo(f"overlay crop: {crop_out}")


def _print_warnings(row: dict, field_name: str) -> None:
    related = [w for w in row.get("warnings", ()) if w.startswith(field_name)]
    for w in related:
        click.echo(f"  warning: {w}")


def _write_overlay_crop(dump_dir: Path, doc_id: str, obj: dict, out: Path) -> None:
    from PIL import Image, ImageDraw

    prov = [p for p in obj.get("provenance", ()) if p.get("tokens")]
    if not prov:
        raise click.ClickException("no provenance boxes to crop")
    page_no = prov[0]["page_no"]
    page_png = dump_dir / doc_id / f"page_{page_no:04d}_after.png"
    if not page_png.exists():
        raise click.ClickException(f"no dumped page image at {page_png}")
    im = Image.open(page_png).convert("RGB")
    draw = ImageDraw.Draw(im)
    xs, ys = [], []
    for tok in prov[0]["tokens"]:
        pts = [(float(x), float(y)) for x, y in tok["box"]]
        draw.line(pts + [pts[0]], fill=(255, 64, 64), width=2)
        xs.extend(x for x, _ in pts)
        ys.extend(y for _, y in pts)
    pad = 32
    box = (max(0, int(min(xs)) - pad), max(0, int(min(ys)) - pad),
           min(im.width, int(max(xs)) + pad), min(im.height, int(max(ys)) + pad))
    im.crop(box).save(out)


@main.command("synth")
@click.option("--out", "-o", required=True, type=click.Path())
@click.option("--docs", default=10, show_default=True, type=int)
@click.option("--seed", default=1234, show_default=True, type=int)
def cmd_synth(out, docs, seed):
    """Generate a runnable synthetic corpus (images, manifest, config, gold)."""
    from .synth import make_corpus

    paths = make_corpus(out, n_docs=docs, seed=seed)
    click.echo(f"corpus: {paths.root}")
    click.echo(f"manifest: {paths.manifest}")
    click.echo(f"config: {paths.config}")
    click.echo(f"gold: {paths.gold}")


if __name__ == "__main__":
    main()
