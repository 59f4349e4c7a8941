"""BM25 page retrieval: index page transcripts, rank pages per target field.

The variant is Okapi BM25 with the +1-inside-log IDF (never negative):

    score(q, p) = sum over distinct terms t of
        IDF(t) * f(t,p) * (k1 + 1) / (f(t,p) + k1 * (1 - b + b * |p| / avgdl))
    IDF(t) = ln((N - n_t + 0.5) / (n_t + 0.5) + 1)

Defaults k1 = 1.2, b = 0.75. Multi-word keywords contribute their
constituent terms; there is no phrase matching.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .documents import FieldSpec
from .errors import IndexError_, LookupError_
from .ocr import PageTranscript

# CJK runs are indexed as overlapping character bigrams; everything else
# splits on whitespace/punctuation.
_CJK_RANGES = (
    (0x3040, 0x30FF),    # hiragana, katakana
    (0x3400, 0x4DBF),    # CJK ext A
    (0x4E00, 0x9FFF),    # CJK unified
    (0xAC00, 0xD7AF),    # hangul
    (0xF900, 0xFAFF),    # CJK compat
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def _is_word_char(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("L", "N")


def tokenize(text: str, language: Optional[str] = None) -> list[str]:
    """Lowercase and split into index terms.

    CJK runs emit overlapping character bigrams (a lone character emits
    itself); other scripts split on whitespace/punctuation, so digit runs
    like the 000 in "IDR'000" become standalone terms.
    """
    terms: list[str] = []
    word: list[str] = []
    cjk: list[str] = []

    def flush_word():
        if word:
            terms.append("".join(word))
            word.clear()

    def flush_cjk():
        if len(cjk) == 1:
            terms.append(cjk[0])
        elif cjk:
            terms.extend(cjk[i] + cjk[i + 1] for i in range(len(cjk) - 1))
        cjk.clear()

    for ch in text.lower():
        if _is_cjk(ch):
            flush_word()
            cjk.append(ch)
        elif _is_word_char(ch):
            flush_cjk()
            word.append(ch)
        else:
            flush_word()
            flush_cjk()
    flush_word()
    flush_cjk()
    return terms


@dataclass(frozen=True)
class Bm25Index:
    doc_id: str
    postings: dict[str, tuple[tuple[int, int], ...]]  # term -> ((page_no, tf), ...)
    page_lengths: dict[int, int]
    avg_page_length: float
    n_pages: int
    k1: float = 1.2
    b: float = 0.75


@dataclass(frozen=True)
class RetrievalResult:
    field: str
    ranked: tuple[tuple[int, float], ...]  # (page_no, score) descending
    retained: tuple[int, ...]
    reduction_ratio: Optional[float] = field(default=None)


def build_index(doc_id: str, transcripts: Sequence[PageTranscript],
                k1: float = 1.2, b: float = 0.75,
                language: Optional[str] = None) -> Bm25Index:
    """Index one document's transcripts; all pages must be present up front."""
    page_lengths: dict[int, int] = {}
    counts: dict[str, dict[int, int]] = {}
    for t in transcripts:
        if t.page_no in page_lengths:
            raise IndexError_(f"duplicate page_no {t.page_no} in document {doc_id!r}")
        terms = tokenize(t.full_text, language)
        page_lengths[t.page_no] = len(terms)
        for term in terms:
            by_page = counts.setdefault(term, {})
            by_page[t.page_no] = by_page.get(t.page_no, 0) + 1
    postings = {
        term: tuple(sorted(by_page.items()))
        for term, by_page in counts.items()
    }
    n_pages = len(page_lengths)
    avg = (sum(page_lengths.values()) / n_pages) if n_pages else 0.0
    return Bm25Index(doc_id=doc_id, postings=postings, page_lengths=page_lengths,
                     avg_page_length=avg, n_pages=n_pages, k1=k1, b=b)


def idf(index: Bm25Index, term: str) -> float:
    n_t = len(index.postings.get(term, ()))
    return math.log((index.n_pages - n_t + 0.5) / (n_t + 0.5) + 1.0)


def score(index: Bm25Index, query_terms: Sequence[str], page_no: int) -> float:
    """BM25 score of one page for the (deduplicated) query terms."""
    if page_no not in index.page_lengths:
        raise LookupError_(f"page {page_no} not in index for {index.doc_id!r}")
    plen = index.page_lengths[page_no]
    total = 0.0
    for term in dict.fromkeys(query_terms):
        tf = 0
        for p, f in index.postings.get(term, ()):
            if p == page_no:
                tf = f
                break
        if tf == 0:
            continue
        norm = tf + index.k1 * (1.0 - index.b + index.b * plen / index.avg_page_length)
        total += idf(index, term) * tf * (index.k1 + 1.0) / norm
    return total


def query_terms_for_field(spec: FieldSpec, language: Optional[str]) -> list[str]:
    """Tokenized, deduplicated union of the field's keywords."""
    terms: list[str] = []
    for kw in spec.keywords_for(language):
        terms.extend(tokenize(kw, language))
    return list(dict.fromkeys(terms))


def rank_pages(index: Bm25Index, spec: FieldSpec, language: Optional[str] = None,
               top_k: int = 3) -> RetrievalResult:
    """Rank every page for the field's keyword query.

    Retained pages are the top_k with strictly positive score; ties resolve
    to the lower page number. An all-zero ranking retains nothing (the
    field is reported not-found downstream).
    """
    terms = query_terms_for_field(spec, language)
    scored = [(p, score(index, terms, p)) for p in sorted(index.page_lengths)]
    scored.sort(key=lambda ps: (-ps[1], ps[0]))
    retained = tuple(p for p, s in scored[:top_k] if s > 0.0)
    return RetrievalResult(field=spec.name, ranked=tuple(scored), retained=retained)


def select_document_pages(results: Sequence[RetrievalResult],
                          n_pages: int) -> tuple[tuple[int, ...], float]:
    """Union of retained pages over all fields and the document-level
    reduction ratio 1 - |union| / n_pages."""
    union: set[int] = set()
    for r in results:
        union.update(r.retained)
    ratio = 1.0 - len(union) / n_pages if n_pages > 0 else 1.0
    return tuple(sorted(union)), ratio
