"""Retrieval backends over a passage corpus: exact and approximate k-NN over
unit-norm embeddings, and an Okapi BM25 inverted index. Both honor the same
metadata filters (date range, tickers, tags)."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from . import encoder

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchFilter:
    date_from: date | None = None
    date_to: date | None = None
    tickers: frozenset[str] | None = None
    tags: frozenset[str] | None = None

    def __post_init__(self):
        if self.date_from and self.date_to and self.date_from > self.date_to:
            raise ValueError("date_from must be <= date_to")
        if self.tickers is not None and not isinstance(self.tickers, frozenset):
            object.__setattr__(self, "tickers", frozenset(self.tickers))
        if self.tags is not None and not isinstance(self.tags, frozenset):
            object.__setattr__(self, "tags", frozenset(self.tags))

    def is_empty(self) -> bool:
        return not (self.date_from or self.date_to or self.tickers or self.tags)

    def matches(self, meta: "PassageMeta") -> bool:
        if self.date_from and (meta.date is None or meta.date < self.date_from):
            return False
        if self.date_to and (meta.date is None or meta.date > self.date_to):
            return False
        if self.tickers and (meta.ticker is None or meta.ticker not in self.tickers):
            return False
        if self.tags and not (self.tags & meta.tags):
            return False
        return True


@dataclass(frozen=True)
class PassageMeta:
    doc_id: str
    date: date | None = None
    ticker: str | None = None
    tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class RankedHit:
    passage_id: str
    doc_id: str
    score: float
    rank: int  # 1-based


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0 <= self.b <= 1:
            raise ValueError("b must be in [0, 1]")


# ---------------------------------------------------------------------------
# Vector index
# ---------------------------------------------------------------------------

@dataclass
class VectorIndex:
    ids: list[str]
    matrix: np.ndarray  # (n, d) unit rows, row i is ids[i]
    metadata: dict[str, PassageMeta]
    version: str
    # Approximate-mode structures (seeded IVF over cosine k-means).
    centroids: np.ndarray | None = None
    cluster_members: list[np.ndarray] | None = None
    nprobe: int = 1


def _filter_mask(ids: Sequence[str], metadata: Mapping[str, PassageMeta],
                 search_filter: SearchFilter | None) -> np.ndarray:
    if search_filter is None or search_filter.is_empty():
        return np.ones(len(ids), dtype=bool)
    return np.array([search_filter.matches(metadata[pid]) for pid in ids], dtype=bool)


def _top_k(ids: Sequence[str], doc_ids: Sequence[str], scores: np.ndarray, k: int) -> list[RankedHit]:
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))[:k]
    return [
        RankedHit(passage_id=ids[i], doc_id=doc_ids[i], score=float(scores[i]), rank=r + 1)
        for r, i in enumerate(order)
    ]


def _cosine_kmeans(matrix: np.ndarray, n_clusters: int, seed: int, iterations: int = 15):
    rng = np.random.default_rng(seed)
    centroids = matrix[rng.choice(len(matrix), size=n_clusters, replace=False)].copy()
    assignment = np.zeros(len(matrix), dtype=np.int64)
    for _ in range(iterations):
        assignment = np.argmax(matrix @ centroids.T, axis=1)
        for c in range(n_clusters):
            members = matrix[assignment == c]
            if len(members):
                mean = members.mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 0:
                    centroids[c] = mean / norm
    return centroids, assignment


def build_vector_index(
    embeddings: Mapping[str, np.ndarray],
    metadata: Mapping[str, PassageMeta],
    approximate: bool = True,
    rng_seed: int = 0,
    recall_target: float = 0.95,
) -> VectorIndex:
    """Index unit-norm embeddings for exact and (optionally) approximate knn.

    The approximate mode is IVF over seeded cosine k-means; the probe count is
    calibrated at build time against the exact ranking until sampled Recall@10
    clears recall_target.
    """
    ids = sorted(embeddings.keys())
    if not ids:
        return VectorIndex(ids=[], matrix=np.zeros((0, 0)), metadata={}, version="empty")
    dims = {embeddings[p].shape for p in ids}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    matrix = np.stack([np.asarray(embeddings[p], dtype=np.float64) for p in ids])
    norms = np.linalg.norm(matrix, axis=1)
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ValueError("embeddings must be unit-norm")
    version = hashlib.sha256(matrix.tobytes()).hexdigest()[:12]
    idx = VectorIndex(ids=ids, matrix=matrix, metadata=dict(metadata), version=version)

    n = len(ids)
    if approximate and n >= 32:
        n_clusters = max(4, int(round(np.sqrt(n))))
        idx.centroids, assignment = _cosine_kmeans(matrix, n_clusters, rng_seed)
        idx.cluster_members = [
            np.nonzero(assignment == c)[0] for c in range(n_clusters)
        ]
        idx.nprobe = _calibrate_nprobe(idx, rng_seed, recall_target)
        logger.info("approximate index: %d clusters, nprobe=%d", n_clusters, idx.nprobe)
    return idx


def _calibrate_nprobe(idx: VectorIndex, rng_seed: int, recall_target: float) -> int:
    rng = np.random.default_rng(rng_seed + 1)
    n = len(idx.ids)
    n_probes_queries = min(100, n)
    sample = rng.choice(n, size=n_probes_queries, replace=False)
    noisy = idx.matrix[sample] + rng.normal(0, 0.2, size=(n_probes_queries, idx.matrix.shape[1]))
    probes = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)
    exact_top = [
        {h.passage_id for h in knn(idx, q, 10, mode="exact")} for q in probes
    ]
    n_clusters = len(idx.cluster_members)
    nprobe = max(1, n_clusters // 16)
    goal = min(1.0, recall_target + 0.02)
    while True:
        idx.nprobe = nprobe
        hits = 0
        total = 0
        for q, truth in zip(probes, exact_top):
            approx = {h.passage_id for h in knn(idx, q, 10, mode="approximate")}
            hits += len(approx & truth)
            total += len(truth)
        if total == 0 or hits / total >= goal or nprobe >= n_clusters:
            return nprobe
        nprobe = min(n_clusters, nprobe * 2)


def knn(
    index: VectorIndex,
    query_vec: np.ndarray,
    k: int,
    search_filter: SearchFilter | None = None,
    mode: str = "exact",
) -> list[RankedHit]:
    """Top-k passages by cosine among those matching the filter; ties break by
    ascending passage id. Returns fewer than k when the filtered corpus is
    smaller."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.ids:
        return []
    mask = _filter_mask(index.ids, index.metadata, search_filter)
    if mode == "approximate" and index.centroids is not None:
        candidate_rows = _approx_candidates(index, query_vec, k, mask)
    else:
        candidate_rows = np.nonzero(mask)[0]
    if len(candidate_rows) == 0:
        return []
    scores = index.matrix[candidate_rows] @ query_vec
    ids = [index.ids[i] for i in candidate_rows]
    doc_ids = [index.metadata[p].doc_id for p in ids]
    return _top_k(ids, doc_ids, scores, k)


def _approx_candidates(index: VectorIndex, query_vec: np.ndarray, k: int,
                       mask: np.ndarray) -> np.ndarray:
    centroid_order = np.argsort(-(index.centroids @ query_vec), kind="stable")
    nprobe = index.nprobe
    n_clusters = len(index.cluster_members)
    while True:
        rows = np.concatenate(
            [index.cluster_members[c] for c in centroid_order[:nprobe]]
            or [np.array([], dtype=np.int64)]
        )
        rows = rows[mask[rows]]
        if len(rows) >= k or nprobe >= n_clusters:
            return rows
        nprobe = min(n_clusters, nprobe * 2)


# ---------------------------------------------------------------------------
# Lexical index (Okapi BM25)
# ---------------------------------------------------------------------------

@dataclass
class LexicalIndex:
    ids: list[str]
    postings: dict[str, dict[str, int]]  # term -> {passage_id: tf}
    doc_len: dict[str, int]
    avg_len: float
    metadata: dict[str, PassageMeta]
    version: str

    @property
    def size(self) -> int:
        return len(self.ids)


def analyze(text: str) -> list[str]:
    """Lexical analyzer: identical pre-hash word splitting as the encoder."""
    return encoder.split_words(text)


def build_lexical_index(
    texts: Mapping[str, str],
    metadata: Mapping[str, PassageMeta],
) -> LexicalIndex:
    """Inverted index with document frequencies and length statistics."""
    ids = sorted(texts.keys())
    postings: dict[str, dict[str, int]] = {}
    doc_len: dict[str, int] = {}
    for pid in ids:
        terms = analyze(texts[pid])
        doc_len[pid] = len(terms)
        for term in terms:
            postings.setdefault(term, {}).setdefault(pid, 0)
            postings[term][pid] += 1
    avg_len = (sum(doc_len.values()) / len(ids)) if ids else 0.0
    digest = hashlib.sha256(
        json.dumps([ids, sorted(postings), len(postings)]).encode()
    ).hexdigest()[:12]
    return LexicalIndex(
        ids=ids,
        postings=postings,
        doc_len=doc_len,
        avg_len=avg_len,
        metadata=dict(metadata),
        version=digest,
    )


def idf(index: LexicalIndex, term: str) -> float:
    """ln(1 + (N - df + 0.5) / (df + 0.5)); df over the unfiltered corpus."""
    df = len(index.postings.get(term, ()))
    n = index.size
    return float(np.log(1.0 + (n - df + 0.5) / (df + 0.5)))


def bm25_search(
    index: LexicalIndex,
    query_text: str,
    k: int,
    search_filter: SearchFilter | None = None,
    params: Bm25Params = Bm25Params(),
) -> list[RankedHit]:
    """Okapi BM25 over filter-matching passages. Passages matching no query
    term are omitted (zero-score results are not returned)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = analyze(query_text)
    if not terms or not index.ids:
        return []
    allowed = None
    if search_filter is not None and not search_filter.is_empty():
        allowed = {pid for pid in index.ids if search_filter.matches(index.metadata[pid])}
    scores: dict[str, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = idf(index, term)
        for pid, tf in plist.items():
            if allowed is not None and pid not in allowed:
                continue
            norm = params.k1 * (1 - params.b + params.b * index.doc_len[pid] / index.avg_len)
            scores[pid] = scores.get(pid, 0.0) + term_idf * (tf * (params.k1 + 1)) / (tf + norm)
    if not scores:
        return []
    ids = sorted(scores.keys())
    arr = np.array([scores[p] for p in ids])
    doc_ids = [index.metadata[p].doc_id for p in ids]
    return _top_k(ids, doc_ids, arr, k)


# ---------------------------------------------------------------------------
# Persistence (private, versioned)
# ---------------------------------------------------------------------------

def save_vector_index(index: VectorIndex, path) -> None:
    meta = {
        pid: {
            "doc_id": m.doc_id,
            "date": m.date.isoformat() if m.date else None,
            "ticker": m.ticker,
            "tags": sorted(m.tags),
        }
        for pid, m in index.metadata.items()
    }
    np.savez(
        path,
        format="finsearch-vindex-v1",
        ids=np.array(index.ids),
        matrix=index.matrix,
        metadata=json.dumps(meta),
        version=index.version,
    )


def load_vector_index(path, approximate: bool = True, rng_seed: int = 0) -> VectorIndex:
    data = np.load(path, allow_pickle=False)
    if str(data["format"]) != "finsearch-vindex-v1":
        raise ValueError(f"unknown index format in {path}")
    meta_raw = json.loads(str(data["metadata"]))
    metadata = {
        pid: PassageMeta(
            doc_id=m["doc_id"],
            date=date.fromisoformat(m["date"]) if m["date"] else None,
            ticker=m["ticker"],
            tags=frozenset(m["tags"]),
        )
        for pid, m in meta_raw.items()
    }
    embeddings = {pid: vec for pid, vec in zip(data["ids"].tolist(), data["matrix"])}
    return build_vector_index(embeddings, metadata, approximate=approximate, rng_seed=rng_seed)
