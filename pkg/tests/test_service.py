from datetime import date

import pytest
from fastapi.testclient import TestClient

from finsearch import encoder
from finsearch.corpus import Passage
from finsearch.index import bm25_search, knn
from finsearch.querygen import QueryPair
from finsearch.service import (
    autocomplete,
    build_state,
    create_app,
    highlight,
    segment_sentences,
)


def make_passages():
    bodies = [
        ("Acme Corp raised FY24 dividend guidance. Analysts discussed the macro backdrop. "
         "Weather was pleasant across the region."),
        ("Globex Industries reported revenue of $4 billion. Management flagged cost pressure. "
         "The call ended early."),
        ("Initech announced a buyback. The board approved the plan yesterday. "
         "Shares moved after hours."),
        ("Acme Corp margin outlook improved. Supply conditions have eased. "
         "Management reiterated targets."),
    ]
    tickers = ["ACME", "GLBX", "INIT", "ACME"]
    passages = []
    for i, body in enumerate(bodies):
        passages.append(Passage(
            id=f"p{i}", doc_id=f"d{i}", ordinal=0,
            context_line=f"Company {i} ({tickers[i]}) | event | 2023-0{i + 1}-15",
            body=body, token_count=40, date=date(2023, i + 1, 15),
            ticker=tickers[i], doc_type="transcript", event="call",
            filename=f"f{i}.txt",
        ))
    return passages


@pytest.fixture(scope="module")
def state():
    model = encoder.create_model(vocab_size=4096, dim=32, rng_seed=0, version="m-test")
    pairs = [
        QueryPair("q1", "Acme FY24 guidance", "p0", split="val"),
        QueryPair("q2", "Acme margin outlook", "p3", split="test"),
        QueryPair("q3", "train only query", "p1", split="train"),
    ]
    return build_state(model, make_passages(), dataset_pairs=pairs, ann=False)


@pytest.fixture(scope="module")
def client(state):
    return TestClient(create_app(state))


class TestSegmentSentences:
    def test_splits_and_merges_short_fragments(self):
        text = "One two three words. Ok. Another full sentence here."
        spans = segment_sentences(text)
        assert [text[s:e] for s, e in spans] == [
            "One two three words.",
            "Ok. Another full sentence here.",
        ]

    def test_trailing_fragment_merges_backward(self):
        text = "A complete sentence right here. The end."
        spans = segment_sentences(text)
        assert [text[s:e] for s, e in spans] == ["A complete sentence right here. The end."]

    def test_one_sentence(self):
        text = "Only one sentence without terminal punctuation"
        assert segment_sentences(text) == [(0, len(text))]


class TestHighlight:
    def test_on_topic_sentence_scores_higher(self, state):
        passage = state.passages["p0"]
        spans = highlight(state.model, "Acme dividend guidance", passage, top_n=1,
                          min_score=-1.0)
        assert len(spans) == 1
        text = passage.body[spans[0].char_start:spans[0].char_end]
        assert "dividend guidance" in text
        # brute-force check: its score beats every other sentence's score
        all_spans = highlight(state.model, "Acme dividend guidance", passage, top_n=10,
                              min_score=-1.0)
        assert max(s.score for s in all_spans) == pytest.approx(spans[0].score)

    def test_spans_sorted_and_disjoint(self, state):
        passage = state.passages["p1"]
        spans = highlight(state.model, "Globex revenue", passage, top_n=3, min_score=-1.0)
        for a, b in zip(spans, spans[1:]):
            assert a.char_end <= b.char_start

    def test_spans_index_into_body(self, state):
        passage = state.passages["p2"]
        for s in highlight(state.model, "Initech buyback", passage, top_n=3, min_score=-1.0):
            assert 0 <= s.char_start < s.char_end <= len(passage.body)


class TestAutocomplete:
    QUERIES = ["Acme FY24 guidance", "Acme margin outlook", "acme revenue", "Globex capex"]

    def test_prefix_match_case_insensitive(self):
        out = autocomplete(self.QUERIES, "acme")
        assert out == ["acme revenue", "Acme FY24 guidance", "Acme margin outlook"]

    def test_no_match(self):
        assert autocomplete(self.QUERIES, "zzz") == []

    def test_shorter_first(self):
        out = autocomplete(["Acme revenue growth", "Acme rev"], "acme")
        assert out == ["Acme rev", "Acme revenue growth"]

    def test_empty_prefix(self):
        assert autocomplete(self.QUERIES, "") == []

    def test_k_cap(self):
        assert autocomplete(self.QUERIES, "a", k=1) == ["acme revenue"]


class TestSearchEndpoint:
    def test_ticker_filter_respected(self, client):
        resp = client.post("/search", json={
            "query": "Acme guidance", "mode": "vector", "k": 10,
            "filter": {"tickers": ["ACME"]},
        })
        assert resp.status_code == 200
        hits = resp.json()["hits"]
        assert hits and all(h["passage_id"] in ("p0", "p3") for h in hits)

    def test_deterministic_modulo_latency(self, client):
        body = {"query": "Globex revenue", "mode": "vector", "k": 5, "highlight": True}
        a = client.post("/search", json=body).json()
        b = client.post("/search", json=body).json()
        a.pop("latency_ms"), b.pop("latency_ms")
        assert a == b

    def test_lexical_parity_with_index_module(self, client, state):
        resp = client.post("/search", json={"query": "buyback board", "mode": "lexical", "k": 5})
        hits = resp.json()["hits"]
        direct = bm25_search(state.lexical_index, "buyback board", 5)
        assert [h["passage_id"] for h in hits] == [h.passage_id for h in direct]
        assert [h["score"] for h in hits] == pytest.approx([h.score for h in direct])

    def test_vector_parity_with_index_module(self, client, state):
        resp = client.post("/search", json={"query": "margin outlook", "mode": "vector", "k": 4})
        qvec = encoder.encode(state.model, "margin outlook", "query")
        direct = knn(state.vector_index, qvec, 4, mode="exact")
        assert [h["passage_id"] for h in resp.json()["hits"]] == \
               [h.passage_id for h in direct]

    def test_highlight_spans_land_in_body(self, client):
        resp = client.post("/search", json={
            "query": "Acme dividend guidance", "mode": "vector", "k": 2, "highlight": True,
        })
        for h in resp.json()["hits"]:
            previous_end = 0
            for span in h["highlights"]:
                assert 0 <= span["char_start"] < span["char_end"] <= len(h["body"])
                assert span["char_start"] >= previous_end
                previous_end = span["char_end"]

    def test_invalid_request_is_400(self, client):
        assert client.post("/search", json={"query": "", "k": 5}).status_code == 400
        assert client.post("/search", json={"query": "x", "k": 0}).status_code == 400
        assert client.post("/search", json={"query": "x", "k": 500}).status_code == 400
        assert client.post("/search", json={"query": "x", "mode": "hybrid"}).status_code == 400

    def test_unloaded_service_returns_503(self):
        bare = TestClient(create_app(None))
        assert bare.post("/search", json={"query": "x"}).status_code == 503
        assert bare.get("/health").status_code == 503


class TestOtherEndpoints:
    def test_autocomplete_excludes_train_queries(self, client):
        resp = client.get("/autocomplete", params={"prefix": "train", "k": 5})
        assert resp.json()["suggestions"] == []

    def test_autocomplete_serves_val_test_queries(self, client):
        resp = client.get("/autocomplete", params={"prefix": "acme", "k": 5})
        assert resp.json()["suggestions"] == ["Acme FY24 guidance", "Acme margin outlook"]

    def test_passage_lookup(self, client):
        resp = client.get("/passages/p1")
        assert resp.status_code == 200
        body = resp.json()
        assert body["id"] == "p1" and body["ticker"] == "GLBX"

    def test_passage_404(self, client):
        assert client.get("/passages/nope").status_code == 404

    def test_health_reports_versions(self, client, state):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert body["model_version"] == "m-test"
        assert body["vector_index_version"] == state.vector_index.version
        assert body["lexical_index_version"] == state.lexical_index.version

    def test_request_log_written(self, tmp_path):
        model = encoder.create_model(vocab_size=4096, dim=32, rng_seed=0)
        log_path = tmp_path / "requests.jsonl"
        st = build_state(model, make_passages(), ann=False)
        st.request_log_path = log_path
        local = TestClient(create_app(st))
        local.post("/search", json={"query": "acme", "k": 3})
        local.post("/search", json={"query": "globex", "mode": "lexical", "k": 3})
        import json
        lines = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[0]["route"] == "/search" and "latency_ms" in lines[0]
        assert lines[1]["mode"] == "lexical"
