"""Okapi BM25 inverted index: scoring, top-k retrieval, Precision@k.

Scoring uses the non-negative idf variant ln(1 + (N - df + 0.5) / (df + 0.5)),
so every indexed term contributes a strictly positive weight even on tiny
indexes such as the label-name micro-index used for output parsing.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Case, LabelSet, tokenize

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass(frozen=True)
class RankedHit:
    doc_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class Bm25Index:
    """Immutable inverted index; build once, read from any thread."""

    doc_ids: tuple[str, ...]
    doc_len: dict[str, int]
    avg_len: float
    postings: dict[str, dict[str, int]]  # term -> {doc_id: tf}, insertion order
    doc_freq: dict[str, int]
    idf: dict[str, float]
    params: Bm25Params
    scheme_id: str
    corpus_hash: str
    doc_pos: dict[str, int] = field(repr=False, default_factory=dict)

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)


def corpus_fingerprint(docs: Iterable[tuple[str, str]], params: Bm25Params, scheme: str) -> str:
    """Content hash over documents and index settings, for cache validation."""
    digest = hashlib.sha256()
    digest.update(f"v{INDEX_FORMAT_VERSION}|{params.k1!r}|{params.b!r}|{scheme}".encode())
    for doc_id, text in docs:
        digest.update(b"\x1e")
        digest.update(doc_id.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(text.encode("utf-8"))
    return digest.hexdigest()


def build_index(
    docs: Sequence[tuple[str, str]],
    params: Bm25Params | None = None,
    scheme: str = "cjk_char",
) -> Bm25Index:
    """Build an inverted index over (id, text) documents."""
    if not docs:
        raise ValueError("cannot index an empty corpus")
    params = params or Bm25Params()
    doc_ids: list[str] = []
    doc_len: dict[str, int] = {}
    postings: dict[str, dict[str, int]] = {}
    for doc_id, text in docs:
        if doc_id in doc_len:
            raise ValueError(f"duplicate document id {doc_id!r}")
        tokens = tokenize(text, scheme).tokens
        doc_ids.append(doc_id)
        doc_len[doc_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, {})[doc_id] = tf
    n = len(doc_ids)
    doc_freq = {term: len(tfs) for term, tfs in postings.items()}
    idf = {
        term: math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for term, df in doc_freq.items()
    }
    return Bm25Index(
        doc_ids=tuple(doc_ids),
        doc_len=doc_len,
        avg_len=sum(doc_len.values()) / n,
        postings=postings,
        doc_freq=doc_freq,
        idf=idf,
        params=params,
        scheme_id=scheme,
        corpus_hash=corpus_fingerprint(docs, params, scheme),
        doc_pos={doc_id: pos for pos, doc_id in enumerate(doc_ids)},
    )


def index_cases(
    cases: Sequence[Case],
    params: Bm25Params | None = None,
    scheme: str = "cjk_char",
) -> Bm25Index:
    return build_index([(case.id, case.fact) for case in cases], params, scheme)


def score(index: Bm25Index, query_tokens: Sequence[str], doc_id: str) -> float:
    """BM25 score of one document for a token sequence.

    Repeated query tokens contribute once per occurrence; terms absent
    from the index contribute nothing.
    """
    if doc_id not in index.doc_len:
        raise ValueError(f"unknown document id {doc_id!r}")
    k1, b = index.params.k1, index.params.b
    norm = k1 * (1.0 - b + b * index.doc_len[doc_id] / index.avg_len)
    total = 0.0
    for term, count in Counter(query_tokens).items():
        tfs = index.postings.get(term)
        if not tfs:
            continue
        tf = tfs.get(doc_id)
        if not tf:
            continue
        total += count * (index.idf[term] * tf * (k1 + 1.0) / (tf + norm))
    return total


def _all_scores(index: Bm25Index, query_tokens: Sequence[str]) -> dict[str, float]:
    # Per-document accumulation mirrors score() exactly (same expressions,
    # distinct query terms in first-occurrence order), so both paths
    # produce bitwise-identical floats and agree on ties.
    k1, b = index.params.k1, index.params.b
    acc: dict[str, float] = {}
    for term, count in Counter(query_tokens).items():
        tfs = index.postings.get(term)
        if not tfs:
            continue
        idf = index.idf[term]
        for doc_id, tf in tfs.items():
            norm = k1 * (1.0 - b + b * index.doc_len[doc_id] / index.avg_len)
            contribution = count * (idf * tf * (k1 + 1.0) / (tf + norm))
            acc[doc_id] = acc.get(doc_id, 0.0) + contribution
    return acc


def retrieve(index: Bm25Index, query_text: str, k: int) -> list[RankedHit]:
    """Top-k documents by BM25 score, ties broken by insertion order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = tokenize(query_text, index.scheme_id).tokens
    scores = _all_scores(index, tokens)
    ranked = sorted(
        index.doc_ids,
        key=lambda doc_id: (-scores.get(doc_id, 0.0), index.doc_pos[doc_id]),
    )
    return [
        RankedHit(doc_id=doc_id, score=scores.get(doc_id, 0.0), rank=rank)
        for rank, doc_id in enumerate(ranked[:k], 1)
    ]


@dataclass(frozen=True)
class PrecisionReport:
    p_at_1: float
    per_query: tuple[float, ...]


def precision_at_k(
    index: Bm25Index,
    queries: Sequence[Case],
    corpus_labels: Mapping[str, str],
    k: int,
) -> PrecisionReport:
    """Aggregate top-1 precision plus per-query Precision@k.

    Per-query P@k counts label matches in the top k and divides by k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not queries:
        raise ValueError("no queries")
    top1_matches = 0
    per_query: list[float] = []
    for case in queries:
        if not case.charge:
            raise ValueError(f"query {case.id!r} has no gold label")
        hits = retrieve(index, case.fact, k)
        matches = sum(1 for hit in hits if corpus_labels[hit.doc_id] == case.charge)
        per_query.append(matches / k)
        if corpus_labels[hits[0].doc_id] == case.charge:
            top1_matches += 1
    return PrecisionReport(p_at_1=top1_matches / len(queries), per_query=tuple(per_query))


def label_similarity(
    outputs: Sequence[str],
    label_set: LabelSet,
    params: Bm25Params | None = None,
    scheme: str = "cjk_char",
) -> list[list[float]]:
    """BM25 score of every (output, label) pair.

    Builds a micro-index whose documents are the label names and treats
    each output text as a query; row order follows ``outputs``, column
    order follows ``label_set``.
    """
    index = build_index([(label, label) for label in label_set], params, scheme)
    rows: list[list[float]] = []
    for text in outputs:
        tokens = tokenize(text, scheme).tokens
        scores = _all_scores(index, tokens)
        rows.append([scores.get(label, 0.0) for label in label_set])
    return rows


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Persist an index as a versioned JSON artifact (lossless round-trip)."""
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "corpus_hash": index.corpus_hash,
        "scheme": index.scheme_id,
        "params": {"k1": index.params.k1, "b": index.params.b},
        "doc_ids": list(index.doc_ids),
        "doc_len": [index.doc_len[doc_id] for doc_id in index.doc_ids],
        "postings": {
            term: [[doc_id, tf] for doc_id, tf in tfs.items()]
            for term, tfs in index.postings.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_index(path: str | Path) -> Bm25Index:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise ValueError(f"unsupported index format version: {version!r}")
    doc_ids = tuple(payload["doc_ids"])
    doc_len = dict(zip(doc_ids, payload["doc_len"]))
    postings = {
        term: {doc_id: tf for doc_id, tf in entries}
        for term, entries in payload["postings"].items()
    }
    n = len(doc_ids)
    doc_freq = {term: len(tfs) for term, tfs in postings.items()}
    idf = {
        term: math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for term, df in doc_freq.items()
    }
    return Bm25Index(
        doc_ids=doc_ids,
        doc_len=doc_len,
        avg_len=sum(doc_len.values()) / n,
        postings=postings,
        doc_freq=doc_freq,
        idf=idf,
        params=Bm25Params(**payload["params"]),
        scheme_id=payload["scheme"],
        corpus_hash=payload["corpus_hash"],
        doc_pos={doc_id: pos for pos, doc_id in enumerate(doc_ids)},
    )
