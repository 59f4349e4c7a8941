"""Synthetic corpus generation for offline runs, tests, and benchmarks.

Pages are rendered as black word blobs on white canvas; the word layout is
registered with the synthetic OCR backend so the planted transcript comes
back deterministically, and a scripted VLM answers each (document, field)
request. Every generated artifact (images, manifest, backend specs, gold)
is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .documents import PageImage
from .ocr import OcrToken, PageTranscript, SyntheticOcrBackend, page_to_png_bytes
from .extraction import ScriptedVlmBackend

# First words of each field's prompt template; the scripted VLM keys its
# replies on (doc marker, template head) appearing together in the prompt.
TEMPLATE_HEADS = {
    "year": "Extract the reporting year",
    "revenue": "Extract total revenue",
    "profit": "Extract the profit for",
    "dividends": "Extract the dividends",
    "currency": "Determine the reporting",
    "background_summary": "Summarize the company",
}

# Disjoint from every default English keyword term, so filler pages never
# outrank planted ones.
FILLER_VOCAB = (
    "quartz", "mango", "delta", "orbit", "velvet", "cobalt", "lantern",
    "meadow", "drizzle", "harbor", "pixel", "saffron", "tundra", "walnut",
    "zephyr", "garnet", "maple", "onyx", "prairie", "quill", "raven",
    "sable", "timber", "umber", "violet", "willow", "yonder", "zenith",
    "amber", "basil", "cedar", "ember", "fennel", "ginger", "hazel",
    "indigo", "jasper", "kelp", "lotus", "marble",
)

PAGE_W = 640
PAGE_H = 880
MARGIN = 48
LINE_H = 18
LINE_GAP = 14
WORD_GAP = 10
CONFIDENCE = 0.99


def _word_width(text: str, rng: np.random.Generator) -> int:
    return max(14, 8 * len(text) + int(rng.integers(-4, 5)))


def layout_lines(lines: Sequence[Sequence[str]], rng: np.random.Generator,
                 width: int = PAGE_W) -> list[OcrToken]:
    """Place lines of words left-to-right, top-down; returns planted tokens."""
    tokens: list[OcrToken] = []
    y = MARGIN
    for line_id, words in enumerate(lines):
        x = MARGIN
        jitter = int(rng.integers(0, 7))
        for word in words:
            w = _word_width(word, rng)
            if x + w > width - MARGIN:
                break
            box = ((float(x), float(y)), (float(x + w), float(y)),
                   (float(x + w), float(y + LINE_H)), (float(x), float(y + LINE_H)))
            tokens.append(OcrToken(text=word, box=box, confidence=CONFIDENCE,
                                   line_id=line_id, language="en"))
            x += w + WORD_GAP
        y += LINE_H + LINE_GAP + jitter
    return tokens


def render_tokens(tokens: Sequence[OcrToken], width: int = PAGE_W,
                  height: int = PAGE_H) -> np.ndarray:
    """Rasterize planted tokens as filled black rectangles on white."""
    img = np.full((height, width), 255, dtype=np.uint8)
    for t in tokens:
        xs = [int(p[0]) for p in t.box]
        ys = [int(p[1]) for p in t.box]
        img[min(ys):max(ys), min(xs):max(xs)] = 0
    return img


def filler_lines(rng: np.random.Generator, n_lines: int) -> list[list[str]]:
    return [
        [FILLER_VOCAB[i] for i in rng.integers(0, len(FILLER_VOCAB), size=int(rng.integers(4, 8)))]
        for _ in range(n_lines)
    ]


def render_text_page(rng: np.random.Generator, width: int = PAGE_W,
                     height: int = PAGE_H, n_lines: int = 14,
                     header: Optional[Sequence[str]] = None) -> tuple[np.ndarray, list[OcrToken]]:
    """A page of random filler lines (plus an optional header line)."""
    lines = filler_lines(rng, n_lines)
    if header is not None:
        lines.insert(0, list(header))
    tokens = layout_lines(lines, rng, width)
    return render_tokens(tokens, width, height), tokens


def render_line_page(rng: np.random.Generator, width: int = 800,
                     height: int = 600, pitch: int = 64,
                     line_h: int = 18) -> tuple[np.ndarray, list[OcrToken]]:
    """A page of solid text-line blobs with ragged random lengths.

    Used by the orientation/deskew fixtures: solid lines keep the
    row-projection structure intact under tilts up to ~10 degrees, and the
    ragged, asymmetric layout makes the four coarse rotations
    distinguishable by ink fingerprint.
    """
    tokens: list[OcrToken] = []
    y = MARGIN
    # asymmetric corner block so 180-degree flips never fingerprint-collide
    anchor = ((float(MARGIN), float(MARGIN - 24)), (float(MARGIN + 90), float(MARGIN - 24)),
              (float(MARGIN + 90), float(MARGIN - 6)), (float(MARGIN), float(MARGIN - 6)))
    tokens.append(OcrToken(text="anchor", box=anchor, confidence=CONFIDENCE,
                           line_id=0, language="en"))
    y += 24
    line_id = 1
    while y + line_h < height - MARGIN:
        length = int(rng.integers(120, 220))
        x0 = MARGIN + int(rng.integers(0, 40))
        box = ((float(x0), float(y)), (float(x0 + length), float(y)),
               (float(x0 + length), float(y + line_h)), (float(x0), float(y + line_h)))
        tokens.append(OcrToken(text=f"rule{line_id}", box=box,
                               confidence=CONFIDENCE, line_id=line_id, language="en"))
        y += pitch
        line_id += 1
    return render_tokens(tokens, width, height), tokens


def _fmt_amount(n: int) -> str:
    return f"{n:,}"


@dataclass(frozen=True)
class CorpusPaths:
    root: Path
    manifest: Path
    config: Path
    gold: Path
    corpus_spec: Path
    vlm_script: Path


def make_corpus(root: str | Path, n_docs: int = 10, seed: int = 1234,
                pages_of_filler: int = 2, target_long_side: int = 640,
                workers: int = 4) -> CorpusPaths:
    """Generate a complete runnable corpus under `root`.

    Each document plants one page per scalar field (some documents omit
    dividends to exercise calibrated abstention), a background page, and
    filler pages. Writes page images, manifest, synthetic backend specs,
    gold, and a ready-to-run pipeline config.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ocr_backend = SyntheticOcrBackend()
    script_entries: list[dict] = []
    manifest_lines: list[str] = []
    gold_lines: list[str] = []
    currencies = ("IDR", "SGD", "USD", "CNY")
    scales = (1, 1000, 1000000)

    for d in range(n_docs):
        doc_id = f"doc_{d:04d}"
        marker = f"FSDOC{d:04d}"
        doc_dir = root / doc_id
        doc_dir.mkdir(exist_ok=True)
        currency = currencies[int(rng.integers(0, len(currencies)))]
        year = 2015 + int(rng.integers(0, 10))
        has_dividends = d % 5 != 2  # a fifth of the corpus abstains

        def money() -> tuple[str, int, int]:
            scale = scales[int(rng.integers(0, len(scales)))]
            base = int(rng.integers(100, 10000))
            return _fmt_amount(base), scale, base * scale

        rev_raw, rev_scale, rev_amount = money()
        prof_raw, prof_scale, prof_amount = money()
        div_raw, div_scale, div_amount = money()

        pages: list[tuple[str, list[list[str]]]] = []
        pages.append(("title", [[marker], *filler_lines(rng, 3)]))
        pages.append(("year", [[marker], ["Year", "ended", str(year)],
                               *filler_lines(rng, 6)]))
        scale_header = {1: [], 1000: [["IDR'000"]], 1000000: [["IDR'000,000"]]}
        pages.append(("revenue", [[marker], *scale_header[rev_scale],
                                  ["Revenue", rev_raw], *filler_lines(rng, 6)]))
        pages.append(("profit", [[marker], *scale_header[prof_scale],
                                 ["Net", "profit", prof_raw], *filler_lines(rng, 6)]))
        if has_dividends:
            pages.append(("dividends", [[marker], *scale_header[div_scale],
                                        ["Dividends", "declared", div_raw],
                                        *filler_lines(rng, 6)]))
        pages.append(("currency", [[marker], ["Currency", currency],
                                   ["expressed", "in", currency],
                                   *filler_lines(rng, 6)]))
        pages.append(("background", [[marker], ["Company", "Background"],
                                     ["incorporated", "alpha", "registry"],
                                     *filler_lines(rng, 6)]))
        for _ in range(pages_of_filler):
            pages.append(("filler", [[marker], *filler_lines(rng, 10)]))

        page_no_of: dict[str, int] = {}
        for idx, (kind, lines) in enumerate(pages, start=1):
            tokens = layout_lines(lines, rng)
            img = render_tokens(tokens)
            if kind not in page_no_of:
                page_no_of[kind] = idx
            ocr_backend.register(f"{doc_id}-p{idx}", img, tokens)
            png = page_to_png_bytes(PageImage.from_array(img, page_no=idx))
            (doc_dir / f"page_{idx:03d}.png").write_bytes(png)

        manifest_lines.append(json.dumps({
            "doc_id": doc_id,
            "paths": [str(doc_dir)],
            "language_hint": "en",
        }))

        def reply(value, unit_scale, ccy, page_kind, quote) -> str:
            return json.dumps({
                "value": value,
                "unit_scale": unit_scale,
                "currency": ccy,
                "page_no": page_no_of[page_kind],
                "quote": quote,
            })

        script_entries.append({
            "require": [marker, TEMPLATE_HEADS["year"]],
            "reply": reply(str(year), 1, None, "year", str(year)),
        })
        script_entries.append({
            "require": [marker, TEMPLATE_HEADS["revenue"]],
            "reply": reply(rev_raw, rev_scale, currency, "revenue", rev_raw),
        })
        script_entries.append({
            "require": [marker, TEMPLATE_HEADS["profit"]],
            "reply": reply(prof_raw, prof_scale, currency, "profit", prof_raw),
        })
        if has_dividends:
            script_entries.append({
                "require": [marker, TEMPLATE_HEADS["dividends"]],
                "reply": reply(div_raw, div_scale, currency, "dividends", div_raw),
            })
        script_entries.append({
            "require": [marker, TEMPLATE_HEADS["currency"]],
            "reply": reply(currency, 1, currency, "currency", currency),
        })
        script_entries.append({
            "require": [marker, TEMPLATE_HEADS["background_summary"]],
            "reply": (f"{doc_id} is a trading company incorporated abroad. "
                      f"It reports in {currency} for the year {year}."),
        })

        gold_lines.append(json.dumps({
            "doc_id": doc_id,
            "year": year,
            "revenue": {"amount": rev_amount, "currency": currency},
            "profit": {"amount": prof_amount, "currency": currency},
            "dividends": ({"amount": div_amount, "currency": currency}
                          if has_dividends else None),
            "currency": currency,
        }))

    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    gold = root / "gold.jsonl"
    gold.write_text("\n".join(gold_lines) + "\n", encoding="utf-8")
    corpus_spec = root / "corpus_spec.json"
    ocr_backend.save_spec(corpus_spec)
    vlm_script = root / "vlm_script.json"
    ScriptedVlmBackend(script_entries).save_script(vlm_script)

    config = root / "config.yaml"
    config.write_text(
        "workers: {workers}\n"
        "preprocess:\n"
        "  target_long_side_px: {target}\n"
        "ocr:\n"
        "  backend: synthetic\n"
        "  corpus_spec: corpus_spec.json\n"
        "  languages: [en]\n"
        "vlm:\n"
        "  backend: scripted\n"
        "  script: vlm_script.json\n"
        "retrieval:\n"
        "  top_k: 3\n".format(workers=workers, target=target_long_side),
        encoding="utf-8",
    )
    return CorpusPaths(root=root, manifest=manifest, config=config, gold=gold,
                       corpus_spec=corpus_spec, vlm_script=vlm_script)


# --- transcript-only corpora for retrieval tests -------------------------------

def make_retrieval_document(rng: np.random.Generator, keywords_by_field: dict[str, Sequence[str]],
                            n_pages: int = 100,
                            tokens_per_page: int = 50) -> tuple[list[PageTranscript], dict[str, int], dict[str, list[int]]]:
    """Build transcripts for one synthetic document with planted field pages.

    Each field gets one planted page carrying its first keyword three times,
    plus up to two decoy pages carrying it once; everything else is filler.
    Returns (transcripts, planted page per field, decoy pages per field).
    """
    fields = list(keywords_by_field)
    page_nos = list(range(1, n_pages + 1))
    chosen = rng.choice(n_pages, size=len(fields) * 3, replace=False)
    planted: dict[str, int] = {}
    decoys: dict[str, list[int]] = {}
    words_for_page: dict[int, list[str]] = {
        p: [FILLER_VOCAB[i] for i in rng.integers(0, len(FILLER_VOCAB), size=tokens_per_page)]
        for p in page_nos
    }
    for i, fname in enumerate(fields):
        kw = str(keywords_by_field[fname][0])
        p_main = int(chosen[3 * i]) + 1
        p_d1 = int(chosen[3 * i + 1]) + 1
        p_d2 = int(chosen[3 * i + 2]) + 1
        planted[fname] = p_main
        decoys[fname] = [p_d1, p_d2]
        words_for_page[p_main][0:3] = [kw, kw, kw]
        words_for_page[p_d1][5:6] = [kw]
        words_for_page[p_d2][7:8] = [kw]

    transcripts = []
    for p in page_nos:
        words = words_for_page[p]
        tokens = [
            OcrToken(text=w, box=((float(j * 12), 0.0), (float(j * 12 + 10), 0.0),
                                  (float(j * 12 + 10), 10.0), (float(j * 12), 10.0)),
                     confidence=1.0, line_id=j // 10, language="en")
            for j, w in enumerate(words)
        ]
        transcripts.append(PageTranscript.from_tokens(p, tokens))
    return transcripts, planted, decoys
