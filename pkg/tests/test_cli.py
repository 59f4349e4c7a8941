import json
import os

import pytest
from click.testing import CliRunner

from finparse.cli import main
from finparse.config import load_config
from finparse.errors import ConfigError
from finparse.pipeline import load_results


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def processed(small_corpus, tmp_path, runner):
    out = tmp_path / "results.jsonl"
    env = dict(os.environ, SOURCE_DATE_EPOCH="1700000000")
    r = runner.invoke(main, ["process", "-m", str(small_corpus.manifest),
                             "-c", str(small_corpus.config), "-o", str(out)],
                      env=env, catch_exceptions=False)
    assert r.exit_code == 0, r.output
    return out


class TestProcess:
    def test_writes_results_and_timing(self, processed):
        rows = load_results(processed)
        assert len(rows) == 3
        assert all(not r["failed"] for r in rows)
        assert processed.with_suffix(".timing.csv").exists()

    def test_rows_sorted_by_doc_id(self, processed):
        rows = load_results(processed)
        ids = [r["doc_id"] for r in rows]
        assert ids == sorted(ids)

    def test_refuses_to_clobber_without_overwrite(self, small_corpus, processed, runner):
        r = runner.invoke(main, ["process", "-m", str(small_corpus.manifest),
                                 "-c", str(small_corpus.config), "-o", str(processed)])
        assert r.exit_code != 0
        assert "overwrite" in r.output.lower()

    def test_overwrite_flag_replaces(self, small_corpus, processed, runner):
        r = runner.invoke(main, ["process", "-m", str(small_corpus.manifest),
                                 "-c", str(small_corpus.config),
                                 "-o", str(processed), "--overwrite"])
        assert r.exit_code == 0, r.output

    def test_failed_document_is_isolated(self, small_corpus, tmp_path, runner):
        manifest = tmp_path / "mixed.jsonl"
        lines = small_corpus.manifest.read_text().strip().splitlines()
        lines.insert(1, json.dumps({"doc_id": "broken",
                                    "paths": [str(tmp_path / "missing-dir")]}))
        manifest.write_text("\n".join(lines) + "\n")
        out = tmp_path / "mixed-results.jsonl"
        r = runner.invoke(main, ["process", "-m", str(manifest),
                                 "-c", str(small_corpus.config), "-o", str(out)])
        assert r.exit_code == 1  # nonzero iff any document failed
        rows = {row["doc_id"]: row for row in load_results(out)}
        assert rows["broken"]["failed"]
        assert "error" in rows["broken"]
        ok = [d for d, row in rows.items() if not row.get("failed")]
        assert len(ok) == 3

    def test_dumps(self, small_corpus, tmp_path, runner):
        out = tmp_path / "dumped.jsonl"
        dump_dir = tmp_path / "pp"
        r = runner.invoke(main, ["process", "-m", str(small_corpus.manifest),
                                 "-c", str(small_corpus.config), "-o", str(out),
                                 "--dump-preprocess", str(dump_dir),
                                 "--dump-retrieval"])
        assert r.exit_code == 0, r.output
        reports = list(dump_dir.rglob("*_report.json"))
        befores = list(dump_dir.rglob("*_before.png"))
        afters = list(dump_dir.rglob("*_after.png"))
        assert reports and len(befores) == len(afters)
        report = json.loads(reports[0].read_text())
        assert {"crop_rect", "coarse_rotation_deg", "fine_skew_deg",
                "scale_factor"} <= set(report)
        retrieval = (tmp_path / "dumped.jsonl.retrieval.jsonl")
        assert retrieval.exists()
        first = json.loads(retrieval.read_text().splitlines()[0])
        assert {"doc_id", "field", "ranked", "retained"} <= set(first)


class TestEvalCommand:
    def test_perfect_corpus_scores_one(self, small_corpus, processed, runner):
        r = runner.invoke(main, ["eval", "--pred", str(processed),
                                 "--gold", str(small_corpus.gold)])
        assert r.exit_code == 0, r.output
        assert "micro_accuracy: 1.0000" in r.output

    def test_empty_results_is_error(self, small_corpus, tmp_path, runner):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        r = runner.invoke(main, ["eval", "--pred", str(empty),
                                 "--gold", str(small_corpus.gold)])
        assert r.exit_code != 0

    def test_json_report_written(self, small_corpus, processed, tmp_path, runner):
        report = tmp_path / "report.json"
        r = runner.invoke(main, ["eval", "--pred", str(processed),
                                 "--gold", str(small_corpus.gold),
                                 "--json-out", str(report)])
        assert r.exit_code == 0
        data = json.loads(report.read_text())
        assert data["micro_accuracy"] == 1.0


class TestBenchCommand:
    def test_prints_metrics_and_breakdown(self, small_corpus, tmp_path, runner):
        out = tmp_path / "bench.jsonl"
        r = runner.invoke(main, ["bench", "-m", str(small_corpus.manifest),
                                 "-c", str(small_corpus.config), "-d", "2",
                                 "-o", str(out)])
        assert r.exit_code == 0, r.output
        assert "docs/h/device" in r.output
        assert "s/page" in r.output
        assert "preprocess" in r.output
        assert "mean page-reduction ratio" in r.output


class TestInspectCommand:
    def test_found_field_shows_provenance(self, processed, runner):
        rows = load_results(processed)
        doc = rows[0]["doc_id"]
        r = runner.invoke(main, ["inspect", "--results", str(processed),
                                 "--doc", doc, "--field", "revenue"])
        assert r.exit_code == 0, r.output
        assert "revenue:" in r.output
        assert "quote" in r.output

    def test_not_found_field_prints_warning_chain(self, processed, runner):
        rows = load_results(processed)
        target = next((r["doc_id"] for r in rows
                       if r["fields"]["dividends"].get("not_found")), None)
        if target is None:
            pytest.skip("corpus seed produced no abstaining document")
        r = runner.invoke(main, ["inspect", "--results", str(processed),
                                 "--doc", target, "--field", "dividends"])
        assert r.exit_code == 0
        assert "not found" in r.output

    def test_unknown_doc_is_lookup_error(self, processed, runner):
        r = runner.invoke(main, ["inspect", "--results", str(processed),
                                 "--doc", "nope", "--field", "revenue"])
        assert r.exit_code != 0

    def test_background_summary_view(self, processed, runner):
        rows = load_results(processed)
        doc = rows[0]["doc_id"]
        r = runner.invoke(main, ["inspect", "--results", str(processed),
                                 "--doc", doc, "--field", "background_summary"])
        assert r.exit_code == 0
        assert "background_summary" in r.output

    def test_overlay_crop_written_from_dump(self, small_corpus, tmp_path, runner):
        out = tmp_path / "res.jsonl"
        dump = tmp_path / "pp"
        r = runner.invoke(main, ["process", "-m", str(small_corpus.manifest),
                                 "-c", str(small_corpus.config), "-o", str(out),
                                 "--dump-preprocess", str(dump)])
        assert r.exit_code == 0, r.output
        doc = load_results(out)[0]["doc_id"]
        crop = tmp_path / "crop.png"
        r = runner.invoke(main, ["inspect", "--results", str(out), "--doc", doc,
                                 "--field", "revenue", "--crop-from", str(dump),
                                 "--crop-out", str(crop)])
        assert r.exit_code == 0, r.output
        assert crop.exists() and crop.stat().st_size > 0


class TestSynthCommand:
    def test_generates_runnable_corpus(self, tmp_path, runner):
        r = runner.invoke(main, ["synth", "-o", str(tmp_path / "c"), "--docs", "1",
                                 "--seed", "3"])
        assert r.exit_code == 0, r.output
        assert (tmp_path / "c" / "manifest.jsonl").exists()
        assert (tmp_path / "c" / "config.yaml").exists()


class TestConfig:
    def test_env_overrides_endpoints(self, monkeypatch):
        monkeypatch.setenv("OCR_ENDPOINT", "http://ocr.example:1")
        monkeypatch.setenv("VLM_ENDPOINT", "http://vlm.example:2")
        cfg = load_config()
        assert cfg.ocr.endpoint == "http://ocr.example:1"
        assert cfg.vlm.endpoint == "http://vlm.example:2"

    def test_missing_keywords_file_fails_fast(self, tmp_path):
        bad = tmp_path / "cfg.yaml"
        bad.write_text("keywords_file: nothere.yaml\n")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_unknown_keys_rejected(self, tmp_path):
        bad = tmp_path / "cfg.yaml"
        bad.write_text("retrieval:\n  topk: 5\n")
        with pytest.raises(ConfigError, match="unknown"):
            load_config(bad)

    def test_validation_bounds(self, tmp_path):
        bad = tmp_path / "cfg.yaml"
        bad.write_text("workers: 0\n")
        with pytest.raises(ConfigError, match="workers"):
            load_config(bad)
