import pytest

from finsearch import encoder, synthetic
from finsearch.querygen import normalize_query


@pytest.fixture(scope="module")
def small_bench():
    return synthetic.prepare_benchmark(
        n_companies=12, docs_per_company=4, passages_per_doc=6, rng_seed=3
    )


class TestStandardBenchmark:
    def test_shapes(self, small_bench):
        assert len(small_bench.documents) == 48
        assert len(small_bench.passages) == 48 * 6
        assert len(small_bench.pairs) > 0.8 * len(small_bench.passages)

    def test_deterministic(self, small_bench):
        again = synthetic.prepare_benchmark(
            n_companies=12, docs_per_company=4, passages_per_doc=6, rng_seed=3
        )
        assert [p.query for p in again.pairs] == [p.query for p in small_bench.pairs]

    def test_passage_token_cap(self, small_bench):
        assert all(p.token_count <= 512 for p in small_bench.passages)

    def test_no_duplicate_normalized_queries(self, small_bench):
        queries = [normalize_query(p.query) for p in small_bench.pairs]
        assert len(queries) == len(set(queries))

    def test_document_grouped_splits(self, small_bench):
        split_of_doc = {}
        for pair in small_bench.pairs:
            doc = small_bench.doc_of[pair.positive_passage_id]
            assert split_of_doc.setdefault(doc, pair.split) == pair.split

    def test_queries_share_tokens_with_positives(self, small_bench):
        for pair in small_bench.pairs[:50]:
            q_tokens = set(encoder.split_words(pair.query))
            p_tokens = set(encoder.split_words(small_bench.passage_texts[pair.positive_passage_id]))
            assert q_tokens & p_tokens


@pytest.fixture(scope="module")
def bench():
    return synthetic.build_paraphrase_benchmark(
        n_companies=16, docs_per_company=4, passages_per_doc=2, rng_seed=5
    )


class TestParaphraseBenchmark:

    def test_queries_share_no_words_with_gold(self, bench):
        for pair in bench.pairs:
            q_tokens = set(encoder.split_words(pair.query))
            gold_tokens = set(encoder.split_words(bench.passage_texts[pair.positive_passage_id]))
            assert not (q_tokens & gold_tokens), (pair.query, q_tokens & gold_tokens)

    def test_query_terms_absent_from_entire_corpus(self, bench):
        corpus_tokens = set()
        for text in bench.passage_texts.values():
            corpus_tokens.update(encoder.split_words(text))
        for pair in bench.pairs:
            for token in encoder.split_words(pair.query):
                assert token not in corpus_tokens, token

    def test_gold_unique_per_query(self, bench):
        # each (alias, metric synonym) query resolves to exactly one passage
        queries = [p.query for p in bench.pairs]
        assert len(queries) == len(set(queries))

    def test_aliases_trained(self, bench):
        # every alias that appears in val/test also appears in a train query,
        # otherwise its embedding could never be learned
        def aliases(pairs):
            return {p.query.split()[0] for p in pairs}

        train_aliases = aliases(bench.pairs_in("train"))
        for split in ("val", "test"):
            assert aliases(bench.pairs_in(split)) <= train_aliases
