"""Retrieval evaluation: Recall@K at passage and document level, ablation
harness, lexical-vs-vector comparison by query length, and the query/context
preparation used in a RAG pipeline."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, replace
from datetime import timedelta
from typing import Mapping, Sequence

import numpy as np

from . import encoder, mining
from .index import (
    Bm25Params,
    LexicalIndex,
    PassageMeta,
    RankedHit,
    SearchFilter,
    VectorIndex,
    bm25_search,
    build_vector_index,
    knn,
)
from .querygen import QueryPair

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 10, 50)


@dataclass(frozen=True)
class EvalReport:
    model_version: str
    query_count: int
    passage_recall: dict[int, float]
    document_recall: dict[int, float]
    config_digest: str
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "model_version": self.model_version,
            "query_count": self.query_count,
            "passage_recall": {str(k): v for k, v in self.passage_recall.items()},
            "document_recall": {str(k): v for k, v in self.document_recall.items()},
            "config_digest": self.config_digest,
            "label": self.label,
        }


@dataclass(frozen=True)
class LengthBucketReport:
    bucket: int  # query word count
    mode: str  # vector | lexical
    filtered: bool  # ticker filter on/off
    recall: dict[int, float]
    sample_size: int


class ContaminationError(RuntimeError):
    """Raised when test documents overlap training documents."""


def recall_at_k(
    runs: Mapping[str, Sequence[RankedHit]],
    truth: Mapping[str, str],
    k: int,
    level: str = "passage",
    doc_of: Mapping[str, str] | None = None,
) -> float:
    """Fraction of queries whose positive is within the first k hits.

    At document level a hit counts when any of the first k passages belongs to
    the positive's document (doc_of maps passage id -> document id).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if level not in ("passage", "document"):
        raise ValueError(f"unknown level: {level!r}")
    if level == "document" and doc_of is None:
        raise ValueError("document-level recall needs doc_of")
    missing = [q for q in truth if q not in runs]
    if missing:
        raise KeyError(f"queries missing from run: {missing[:5]}")
    if not truth:
        return 0.0
    hits = 0
    for qid, positive in truth.items():
        top = runs[qid][:k]
        if level == "passage":
            hits += any(h.passage_id == positive for h in top)
        else:
            target_doc = doc_of[positive]
            hits += any(h.doc_id == target_doc for h in top)
    return hits / len(truth)


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:12]


def run_retrieval_eval(
    model: encoder.EncoderModel,
    test_pairs: Sequence[QueryPair],
    passage_texts: Mapping[str, str],
    doc_of: Mapping[str, str],
    ks: Sequence[int] = DEFAULT_KS,
    train_doc_ids: set[str] | None = None,
    label: str = "",
) -> EvalReport:
    """Embed queries and corpus, run exact knn, report recall at each K.

    Aborts if any test pair's document also appears in train_doc_ids (split
    contamination guard).
    """
    if not test_pairs:
        raise ValueError("no test pairs")
    if train_doc_ids is not None:
        overlap = {doc_of[p.positive_passage_id] for p in test_pairs} & train_doc_ids
        if overlap:
            raise ContaminationError(f"test documents overlap train: {sorted(overlap)[:5]}")
    metadata = {pid: PassageMeta(doc_id=doc_of[pid]) for pid in passage_texts}
    pids = sorted(passage_texts)
    vectors = encoder.encode_batch(model, [passage_texts[p] for p in pids], "passage")
    vindex = build_vector_index(
        {pid: vectors[i] for i, pid in enumerate(pids)}, metadata, approximate=False
    )
    k_max = max(ks)
    runs: dict[str, list[RankedHit]] = {}
    query_vecs = encoder.encode_batch(model, [p.query for p in test_pairs], "query")
    for i, pair in enumerate(test_pairs):
        runs[pair.query_id] = knn(vindex, query_vecs[i], k_max)
    truth = {p.query_id: p.positive_passage_id for p in test_pairs}
    report = EvalReport(
        model_version=model.version,
        query_count=len(test_pairs),
        passage_recall={k: recall_at_k(runs, truth, k, "passage") for k in ks},
        document_recall={k: recall_at_k(runs, truth, k, "document", doc_of) for k in ks},
        config_digest=_digest(
            {"ks": list(ks), "corpus": len(pids), "queries": len(test_pairs),
             "model": model.version, "label": label}
        ),
        label=label,
    )
    logger.info("eval %s: R@1=%.3f (passage)", label or model.version,
                report.passage_recall.get(1, float("nan")))
    return report


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationConfig:
    hard_negatives: int  # 0..3
    data_fraction: float  # document-level subsample, e.g. 0.37 or 1.0

    @property
    def label(self) -> str:
        return f"hn{self.hard_negatives}-frac{self.data_fraction:g}"


def subsample_by_document(
    pairs: Sequence[QueryPair],
    doc_of: Mapping[str, str],
    fraction: float,
    rng_seed: int,
) -> list[QueryPair]:
    """Keep the pairs of a seeded random fraction of the documents."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1.0:
        return list(pairs)
    docs = sorted({doc_of[p.positive_passage_id] for p in pairs})
    rng = np.random.default_rng(rng_seed)
    keep = set(
        docs[i] for i in rng.choice(len(docs), size=max(1, round(fraction * len(docs))), replace=False)
    )
    return [p for p in pairs if doc_of[p.positive_passage_id] in keep]


def run_ablations(
    pairs: Sequence[QueryPair],
    passage_texts: Mapping[str, str],
    doc_of: Mapping[str, str],
    configs: Sequence[AblationConfig],
    train_config: encoder.TrainConfig,
    model_seed: int = 0,
    mining_cfg: mining.MiningConfig | None = None,
    prelim_epochs: int = 1,
    ks: Sequence[int] = DEFAULT_KS,
    vocab_size: int = 32768,
    dim: int = 64,
) -> list[EvalReport]:
    """Train and evaluate one model per ablation configuration.

    Hard negatives are mined once per call with a preliminary no-negatives
    model, so every configuration trains on the same mined dataset and the
    comparison isolates negative usage and data scale.
    """
    train_pairs = [p for p in pairs if p.split == "train"]
    test_pairs = [p for p in pairs if p.split == "test"]
    if not train_pairs or not test_pairs:
        raise ValueError("need non-empty train and test splits")
    train_docs = {doc_of[p.positive_passage_id] for p in train_pairs}

    needs_mining = any(c.hard_negatives > 0 for c in configs)
    mined_pairs = list(train_pairs)
    if needs_mining:
        prelim_cfg = replace(
            train_config, hard_negatives_per_query=0, epochs=prelim_epochs,
            checkpoint_epochs=(prelim_epochs,),
        )
        prelim = encoder.create_model(vocab_size, dim, rng_seed=model_seed, version="prelim")
        encoder.train(prelim, train_pairs, passage_texts, prelim_cfg)
        cfg = mining_cfg or mining.MiningConfig(top_k=min(1000, len(passage_texts)))
        mined_pairs, dropped = mining.mine(prelim, train_pairs, passage_texts, cfg)
        logger.info("ablation mining dropped %d of %d pairs", len(dropped), len(train_pairs))

    reports = []
    for config in configs:
        subset = subsample_by_document(mined_pairs, doc_of, config.data_fraction, model_seed)
        cfg = replace(train_config, hard_negatives_per_query=config.hard_negatives)
        model = encoder.create_model(vocab_size, dim, rng_seed=model_seed, version=config.label)
        encoder.train(model, subset, passage_texts, cfg)
        report = run_retrieval_eval(
            model, test_pairs, passage_texts, doc_of, ks=ks,
            train_doc_ids=train_docs, label=config.label,
        )
        reports.append(report)
    return reports


# ---------------------------------------------------------------------------
# Lexical vs vector by query length
# ---------------------------------------------------------------------------

def window_for(positive_date, days: int = 365):
    """A date window of the given width containing the positive's date."""
    half = days // 2
    return positive_date - timedelta(days=half), positive_date + timedelta(days=days - half)


def length_stratified_compare(
    model: encoder.EncoderModel,
    vector_index: VectorIndex,
    lexical_index: LexicalIndex,
    test_pairs: Sequence[QueryPair],
    passages: Mapping[str, object],  # pid -> Passage (date/ticker/doc_id)
    buckets: Sequence[int] = (2, 3, 4, 5, 6),
    per_bucket_n: int = 100,
    ticker_filter: bool = False,
    date_window_days: int = 365,
    rng_seed: int = 0,
    ks: Sequence[int] = (1, 10),
    bm25_params: Bm25Params = Bm25Params(),
) -> list[LengthBucketReport]:
    """Evaluate vector and lexical retrieval on queries of exactly 2..6 words,
    with a one-year date window around each positive (and optionally the
    positive's own ticker as a filter)."""
    rng = np.random.default_rng(rng_seed)
    by_bucket: dict[int, list[QueryPair]] = {b: [] for b in buckets}
    for pair in test_pairs:
        n_words = len(pair.query.split())
        if n_words in by_bucket:
            by_bucket[n_words].append(pair)

    reports = []
    k_max = max(ks)
    for bucket in buckets:
        eligible = by_bucket[bucket]
        if not eligible:
            logger.warning("length bucket %d has no eligible queries; omitted", bucket)
            continue
        if len(eligible) > per_bucket_n:
            idx = rng.choice(len(eligible), size=per_bucket_n, replace=False)
            sample = [eligible[i] for i in sorted(idx)]
        else:
            sample = eligible
        runs_vec: dict[str, list[RankedHit]] = {}
        runs_lex: dict[str, list[RankedHit]] = {}
        for pair in sample:
            passage = passages[pair.positive_passage_id]
            date_from, date_to = window_for(passage.date, date_window_days)
            if not (date_from <= passage.date <= date_to):
                raise ValueError("date window must contain the positive's date")
            search_filter = SearchFilter(
                date_from=date_from,
                date_to=date_to,
                tickers=frozenset([passage.ticker]) if ticker_filter and passage.ticker else None,
            )
            qvec = encoder.encode(model, pair.query, "query")
            runs_vec[pair.query_id] = knn(vector_index, qvec, k_max, search_filter)
            runs_lex[pair.query_id] = bm25_search(
                lexical_index, pair.query, k_max, search_filter, bm25_params
            )
        truth = {p.query_id: p.positive_passage_id for p in sample}
        for mode, runs in (("vector", runs_vec), ("lexical", runs_lex)):
            reports.append(
                LengthBucketReport(
                    bucket=bucket,
                    mode=mode,
                    filtered=ticker_filter,
                    recall={k: recall_at_k(runs, truth, k) for k in ks},
                    sample_size=len(sample),
                )
            )
    return reports


def length_reports_to_csv(reports: Sequence[LengthBucketReport]) -> str:
    """Plot-ready CSV: one row per (bucket, mode, filtered, k)."""
    lines = ["bucket,mode,filtered,k,recall,sample_size"]
    for r in reports:
        for k in sorted(r.recall):
            lines.append(f"{r.bucket},{r.mode},{int(r.filtered)},{k},{r.recall[k]:.6f},{r.sample_size}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# RAG query/context preparation
# ---------------------------------------------------------------------------

_INSTRUCTION_VERBS = (
    "answer", "respond", "reply", "provide", "give", "express", "format",
    "round", "state", "use", "return", "limit", "present", "show",
)

_BRACKETED_RE = re.compile(r"\s*[(\[][^)\]]*[)\]]")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.?!])\s+")

REWRITE_PROMPT = (
    "Rewrite the following question as a concise search query. Remove any "
    "formatting or answer-style instructions; keep every entity, metric and "
    "date.\n\nQuestion: {question}\n\nSearch query:"
)

ANSWER_PROMPT = (
    "Answer the question using only the context below. Reply with a concise "
    "answer (a number, a short phrase, or at most two sentences); do not "
    "restate the question.\n\nContext:\n{context}\n\nQuestion: {question}\n\nAnswer:"
)


def _is_instruction(clause: str) -> bool:
    words = clause.strip().strip(".,;:").lower().split()
    return bool(words) and words[0] in _INSTRUCTION_VERBS


def _rule_based_strip(question: str) -> str:
    def drop_if_instruction(match: re.Match) -> str:
        inner = match.group().strip().strip("([])")
        return "" if _is_instruction(inner) else match.group()

    text = _BRACKETED_RE.sub(drop_if_instruction, question).strip()
    sentences = _SENTENCE_SPLIT_RE.split(text)
    while len(sentences) > 1 and _is_instruction(sentences[-1]):
        sentences.pop()
    return " ".join(sentences).strip()


def rag_prepare(question: str, rewriter=None) -> str:
    """Turn a benchmark-style question into a retrieval query.

    With a rewriter client, one rewrite call; otherwise (or on transport
    failure) a rule-based strip of bracketed clauses and trailing imperative
    sentences carrying formatting instructions.
    """
    if rewriter is not None:
        from .querygen import TransportError

        try:
            return rewriter.complete(REWRITE_PROMPT.format(question=question)).strip()
        except TransportError as exc:
            logger.warning("rewriter unavailable (%s); falling back to rule-based strip", exc)
    return _rule_based_strip(question)


def rag_context(hits: Sequence[RankedHit], passage_store: Mapping[str, object]) -> str:
    """Concatenate hits as "<filename>\\n<context_line>\\n<body>" blocks in rank
    order, blank-line separated. The filename preserves the parent document's
    identity for the answering model."""
    blocks = []
    for hit in sorted(hits, key=lambda h: h.rank):
        passage = passage_store.get(hit.passage_id)
        if passage is None:
            raise KeyError(f"passage missing from store: {hit.passage_id}")
        blocks.append(f"{passage.filename}\n{passage.context_line}\n{passage.body}")
    return "\n\n".join(blocks)


def rag_answer_prompt(question: str, context: str) -> str:
    """Prompt an external LLM for a concise grounded answer."""
    return ANSWER_PROMPT.format(context=context, question=question)
