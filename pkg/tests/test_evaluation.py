from datetime import date

import numpy as np
import pytest

from finsearch import encoder
from finsearch.corpus import Passage
from finsearch.evaluation import (
    ContaminationError,
    rag_answer_prompt,
    rag_context,
    rag_prepare,
    recall_at_k,
    length_reports_to_csv,
    length_stratified_compare,
    run_retrieval_eval,
    subsample_by_document,
    window_for,
)
from finsearch.index import (
    PassageMeta,
    RankedHit,
    build_lexical_index,
    build_vector_index,
)
from finsearch.querygen import QueryPair, TransportError


def hit(pid, doc, rank, score=None):
    return RankedHit(passage_id=pid, doc_id=doc, score=score if score is not None else -rank,
                     rank=rank)


class TestRecallAtK:
    def fixture_runs(self):
        # 10 queries; positives of q0..q3 at rank 1; q4..q7 positive in top 3;
        # q8, q9 outside top 3. Hand-enumerated expectations below.
        runs = {}
        truth = {}
        doc_of = {}
        for i in range(10):
            pid = f"pos{i}"
            truth[f"q{i}"] = pid
            doc_of[pid] = f"doc{i}"
            if i < 4:
                rank_of_positive = 1
            elif i < 8:
                rank_of_positive = 3
            else:
                rank_of_positive = 7
            hits = []
            for r in range(1, 11):
                if r == rank_of_positive:
                    hits.append(hit(pid, f"doc{i}", r))
                else:
                    hits.append(hit(f"filler{i}-{r}", f"fdoc{i}-{r}", r))
            runs[f"q{i}"] = hits
        return runs, truth, doc_of

    def test_hand_enumerated_values(self):
        runs, truth, doc_of = self.fixture_runs()
        assert recall_at_k(runs, truth, 1) == pytest.approx(0.4)
        assert recall_at_k(runs, truth, 3) == pytest.approx(0.8)
        assert recall_at_k(runs, truth, 10) == pytest.approx(1.0)
        assert recall_at_k(runs, truth, 1, "document", doc_of) == pytest.approx(0.4)

    def test_document_level_counts_sibling_passages(self):
        runs = {"q0": [hit("sibling", "docA", 1), hit("x", "docB", 2)]}
        truth = {"q0": "positive"}
        doc_of = {"positive": "docA"}
        assert recall_at_k(runs, truth, 1, "passage") == 0.0
        assert recall_at_k(runs, truth, 1, "document", doc_of) == 1.0

    def test_monotone_in_k(self):
        runs, truth, doc_of = self.fixture_runs()
        values = [recall_at_k(runs, truth, k) for k in (1, 2, 3, 5, 10)]
        assert values == sorted(values)

    def test_document_ge_passage(self):
        runs, truth, doc_of = self.fixture_runs()
        for k in (1, 3, 10):
            assert recall_at_k(runs, truth, k, "document", doc_of) >= recall_at_k(runs, truth, k)

    def test_validation(self):
        with pytest.raises(ValueError):
            recall_at_k({}, {}, 0)
        with pytest.raises(ValueError):
            recall_at_k({}, {}, 1, "paragraph")
        with pytest.raises(KeyError):
            recall_at_k({}, {"q1": "p"}, 1)


def tiny_benchmark(n_docs=12, passages_per_doc=2, seed=0):
    """Hand-rolled corpus where query i uniquely matches passage i."""
    passages = {}
    doc_of = {}
    pairs = []
    k = 0
    for d in range(n_docs):
        for j in range(passages_per_doc):
            pid = f"p{k:03d}"
            passages[pid] = f"entity{k} metric{k} common filler words shared by all"
            doc_of[pid] = f"doc{d}"
            pairs.append(QueryPair(f"q{k}", f"entity{k} metric{k}", pid,
                                   split="test" if d >= n_docs - 3 else "train"))
            k += 1
    return passages, doc_of, pairs


class TestRunRetrievalEval:
    def test_trained_style_model_gets_high_recall(self):
        # one-hot-ish: entity tokens dominate, so even a random model with
        # shared tokens retrieves the right passage among 24
        passages, doc_of, pairs = tiny_benchmark()
        model = encoder.create_model(vocab_size=2048, dim=32, rng_seed=0)
        test_pairs = [p for p in pairs if p.split == "test"]
        report = run_retrieval_eval(model, test_pairs, passages, doc_of, ks=(1, 10))
        assert report.query_count == len(test_pairs)
        assert 0 <= report.passage_recall[1] <= report.passage_recall[10] <= 1
        assert report.document_recall[1] >= report.passage_recall[1]

    def test_contamination_guard(self):
        passages, doc_of, pairs = tiny_benchmark()
        model = encoder.create_model(vocab_size=2048, dim=32, rng_seed=0)
        test_pairs = [p for p in pairs if p.split == "test"]
        train_docs = {doc_of[p.positive_passage_id] for p in pairs}  # includes test docs
        with pytest.raises(ContaminationError):
            run_retrieval_eval(model, test_pairs, passages, doc_of,
                               train_doc_ids=train_docs)

    def test_random_model_near_random_baseline_on_disjoint_vocab(self):
        # queries share no tokens with passages: cosine is hash noise, so
        # Recall@1 ~ 1/corpus_size
        rng = np.random.default_rng(1)
        passages = {f"p{i:03d}": f"doca{i} worda{i} wordb{i}" for i in range(200)}
        doc_of = {pid: pid for pid in passages}
        pairs = [QueryPair(f"q{i}", f"queryterm{i} otherterm{i}", f"p{i:03d}", split="test")
                 for i in range(200)]
        model = encoder.create_model(vocab_size=4096, dim=16, rng_seed=2)
        report = run_retrieval_eval(model, pairs, passages, doc_of, ks=(1,))
        assert report.passage_recall[1] <= 5.0 / 200  # near 1/200, allow slack

    def test_deterministic(self):
        passages, doc_of, pairs = tiny_benchmark()
        model = encoder.create_model(vocab_size=2048, dim=32, rng_seed=3)
        test_pairs = [p for p in pairs if p.split == "test"]
        a = run_retrieval_eval(model, test_pairs, passages, doc_of)
        b = run_retrieval_eval(model, test_pairs, passages, doc_of)
        assert a == b


class TestSubsample:
    def test_fraction_by_document(self):
        passages, doc_of, pairs = tiny_benchmark(n_docs=20)
        subset = subsample_by_document(pairs, doc_of, 0.5, rng_seed=0)
        docs = {doc_of[p.positive_passage_id] for p in subset}
        assert len(docs) == 10
        # whole documents: every pair of a kept doc is kept
        for p in pairs:
            if doc_of[p.positive_passage_id] in docs:
                assert p in subset

    def test_full_fraction_identity(self):
        passages, doc_of, pairs = tiny_benchmark()
        assert subsample_by_document(pairs, doc_of, 1.0, 0) == list(pairs)

    def test_seeded(self):
        passages, doc_of, pairs = tiny_benchmark(n_docs=20)
        a = subsample_by_document(pairs, doc_of, 0.37, 5)
        b = subsample_by_document(pairs, doc_of, 0.37, 5)
        assert a == b


def passage_obj(pid, doc_id, body, ticker, d, event=None):
    return Passage(id=pid, doc_id=doc_id, ordinal=0,
                   context_line=f"x | {d.isoformat()}", body=body, token_count=10,
                   date=d, ticker=ticker, doc_type="transcript", event=event,
                   filename=f"{pid}.txt")


class TestLengthStratified:
    def build(self, n=30):
        passages = {}
        pairs = []
        for i in range(n):
            pid = f"p{i:03d}"
            body = f"entity{i} metric{i} filler words to search"
            passages[pid] = passage_obj(pid, f"d{i}", body, f"TK{i % 5}", date(2023, 6, 15))
            words = ["one", "two", "three", "four", "five", "six"]
            query = " ".join([f"entity{i}", f"metric{i}"] + words[: i % 5])
            pairs.append(QueryPair(f"q{i}", query, pid, split="test"))
        model = encoder.create_model(vocab_size=2048, dim=32, rng_seed=0)
        texts = {pid: p.embed_text() for pid, p in passages.items()}
        metadata = {
            pid: PassageMeta(doc_id=p.doc_id, date=p.date, ticker=p.ticker, tags=p.tags())
            for pid, p in passages.items()
        }
        vecs = encoder.encode_batch(model, [texts[f"p{i:03d}"] for i in range(n)], "passage")
        vindex = build_vector_index(
            {f"p{i:03d}": vecs[i] for i in range(n)}, metadata, approximate=False
        )
        lindex = build_lexical_index(texts, metadata)
        return model, vindex, lindex, pairs, passages

    def test_buckets_by_exact_word_count(self):
        model, vindex, lindex, pairs, passages = self.build()
        reports = length_stratified_compare(model, vindex, lindex, pairs, passages,
                                            buckets=(2, 3, 4), per_bucket_n=50)
        assert {r.bucket for r in reports} <= {2, 3, 4}
        for r in reports:
            assert r.mode in ("vector", "lexical")
            assert r.sample_size > 0

    def test_empty_bucket_omitted(self):
        model, vindex, lindex, pairs, passages = self.build()
        reports = length_stratified_compare(model, vindex, lindex, pairs, passages,
                                            buckets=(9,), per_bucket_n=10)
        assert reports == []

    def test_own_ticker_filter_never_hurts_per_query(self):
        model, vindex, lindex, pairs, passages = self.build()
        ks = (1, 10)
        plain = length_stratified_compare(model, vindex, lindex, pairs, passages,
                                          buckets=(2, 3), ticker_filter=False, ks=ks)
        filtered = length_stratified_compare(model, vindex, lindex, pairs, passages,
                                             buckets=(2, 3), ticker_filter=True, ks=ks)
        by_key = {(r.bucket, r.mode): r for r in plain}
        for r in filtered:
            base = by_key[(r.bucket, r.mode)]
            for k in ks:
                assert r.recall[k] >= base.recall[k] - 1e-12

    def test_window_rejects_date_outside(self):
        assert window_for(date(2023, 6, 15))[0] <= date(2023, 6, 15)
        model, vindex, lindex, pairs, passages = self.build(n=5)
        # corrupt one passage date far outside any window the harness derives
        import finsearch.evaluation as ev
        orig = ev.window_for
        ev.window_for = lambda d, days=365: (date(2001, 1, 1), date(2001, 12, 31))
        try:
            with pytest.raises(ValueError, match="date window"):
                length_stratified_compare(model, vindex, lindex, pairs, passages,
                                          buckets=(2,), per_bucket_n=5)
        finally:
            ev.window_for = orig

    def test_csv_export(self):
        model, vindex, lindex, pairs, passages = self.build()
        reports = length_stratified_compare(model, vindex, lindex, pairs, passages,
                                            buckets=(2,), per_bucket_n=5, ks=(1,))
        csv = length_reports_to_csv(reports)
        lines = csv.strip().split("\n")
        assert lines[0] == "bucket,mode,filtered,k,recall,sample_size"
        assert len(lines) == 1 + len(reports)


class StubRewriter:
    def __init__(self, reply=None, fail=False):
        self.reply = reply
        self.fail = fail

    def complete(self, prompt):
        if self.fail:
            raise TransportError("down")
        return self.reply


class TestRagPrepare:
    def test_rule_based_strips_trailing_instructions(self):
        q = "What was Acme's FY22 capex? Answer in millions, to one decimal."
        assert rag_prepare(q) == "What was Acme's FY22 capex?"

    def test_plain_question_unchanged(self):
        q = "What was Acme's FY22 capex?"
        assert rag_prepare(q) == q

    def test_bracketed_instruction_clause_removed(self):
        q = "What is Globex net debt (answer in millions) for FY23?"
        assert rag_prepare(q) == "What is Globex net debt for FY23?"

    def test_informative_brackets_kept(self):
        q = "What was EBITDA (earnings before interest) in FY23?"
        assert rag_prepare(q) == q

    def test_rewriter_passthrough(self):
        assert rag_prepare("anything", StubRewriter(reply="fixed text")) == "fixed text"

    def test_rewriter_failure_falls_back(self):
        q = "What was capex? Answer briefly."
        assert rag_prepare(q, StubRewriter(fail=True)) == "What was capex?"


class TestRagContext:
    def make_store(self):
        return {
            "p1": passage_obj("p1", "d1", "first body", "A", date(2023, 1, 1)),
            "p2": passage_obj("p2", "d2", "second body", "B", date(2023, 2, 2)),
        }

    def test_blocks_in_rank_order(self):
        store = self.make_store()
        hits = [hit("p2", "d2", 2), hit("p1", "d1", 1)]
        ctx = rag_context(hits, store)
        blocks = ctx.split("\n\n")
        assert len(blocks) == 2
        assert blocks[0].startswith("p1.txt\n")
        assert blocks[0].endswith("first body")
        assert blocks[1].startswith("p2.txt\n")

    def test_empty_hits(self):
        assert rag_context([], self.make_store()) == ""

    def test_missing_passage_named(self):
        with pytest.raises(KeyError, match="p9"):
            rag_context([hit("p9", "d9", 1)], self.make_store())

    def test_answer_prompt_contains_context_and_question(self):
        prompt = rag_answer_prompt("What is X?", "CONTEXT BLOCK")
        assert "CONTEXT BLOCK" in prompt and "What is X?" in prompt
        assert "concise" in prompt


class TestRunAblations:
    def test_two_configs_two_distinct_digests(self):
        from finsearch.evaluation import AblationConfig, run_ablations

        passages, doc_of, pairs = tiny_benchmark(n_docs=14, passages_per_doc=2)
        cfg = encoder.TrainConfig(batch_size=8, epochs=1, learning_rate=0.1,
                                  hard_negatives_per_query=0, rng_seed=0,
                                  checkpoint_epochs=(1.0,))
        reports = run_ablations(
            pairs, passages, doc_of,
            [AblationConfig(0, 1.0), AblationConfig(0, 0.5)],
            cfg, model_seed=0, ks=(1, 10), vocab_size=1024, dim=16,
        )
        assert len(reports) == 2
        assert reports[0].config_digest != reports[1].config_digest
        assert reports[0].label == "hn0-frac1"
        assert reports[1].label == "hn0-frac0.5"
