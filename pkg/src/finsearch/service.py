"""HTTP retrieval service: filtered vector/lexical search, autocomplete from
curated dataset queries, and per-result sentence highlighting."""
from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Literal, Mapping, Sequence

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import encoder
from .corpus import Passage
from .index import (
    Bm25Params,
    LexicalIndex,
    SearchFilter,
    VectorIndex,
    bm25_search,
    knn,
)

logger = logging.getLogger(__name__)

_SENTENCE_BOUNDARY_RE = re.compile(r"[.?!](?=\s)")
_MIN_SENTENCE_TOKENS = 3


# ---------------------------------------------------------------------------
# Sentence segmentation and highlighting
# ---------------------------------------------------------------------------

def segment_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences: split on ./?/! before whitespace;
    fragments under 3 tokens are merged into the following sentence."""
    spans = []
    start = 0
    for match in _SENTENCE_BOUNDARY_RE.finditer(text):
        spans.append((start, match.end()))
        start = match.end()
    if start < len(text):
        spans.append((start, len(text)))

    trimmed = []
    for s, e in spans:
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if e > s:
            trimmed.append((s, e))

    merged: list[tuple[int, int]] = []
    pending: tuple[int, int] | None = None
    for s, e in trimmed:
        if pending is not None:
            s = pending[0]
            pending = None
        if len(encoder.split_words(text[s:e])) < _MIN_SENTENCE_TOKENS:
            pending = (s, e)
            continue
        merged.append((s, e))
    if pending is not None:
        if merged:
            merged[-1] = (merged[-1][0], pending[1])
        else:
            merged.append(pending)
    return merged


@dataclass(frozen=True)
class Highlight:
    char_start: int
    char_end: int
    score: float


def highlight(
    model: encoder.EncoderModel,
    query: str,
    passage: Passage,
    top_n: int = 3,
    min_score: float = 0.0,
) -> list[Highlight]:
    """Score each sentence of the passage body against the query by embedding
    the sentence's token sub-span; return the best spans in document order."""
    query_vec = encoder.encode(model, query, "query")
    embed_text = passage.embed_text()
    body_offset_tokens = encoder.prefix_token_count("passage") + len(
        encoder.split_words(passage.context_line)
    )
    token_offsets = encoder.split_words_with_offsets(passage.body)
    scored = []
    for char_start, char_end in segment_sentences(passage.body):
        token_idx = [
            i for i, (_, ts, te) in enumerate(token_offsets)
            if ts >= char_start and te <= char_end
        ]
        if not token_idx:
            continue
        span = (body_offset_tokens + token_idx[0], body_offset_tokens + token_idx[-1] + 1)
        vec = encoder.encode_span(model, embed_text, span, role="passage")
        score = encoder.similarity(query_vec, vec)
        if score >= min_score:
            scored.append(Highlight(char_start, char_end, score))
    scored.sort(key=lambda h: (-h.score, h.char_start))
    best = scored[:top_n]
    best.sort(key=lambda h: h.char_start)
    return best


# ---------------------------------------------------------------------------
# Autocomplete
# ---------------------------------------------------------------------------

def autocomplete(queries: Sequence[str], prefix: str, k: int = 10) -> list[str]:
    """Case-insensitive prefix matches, shortest first then lexicographic."""
    if not prefix:
        return []
    needle = prefix.casefold()
    matches = [q for q in queries if q.casefold().startswith(needle)]
    matches.sort(key=lambda q: (len(q), q.casefold(), q))
    return matches[:k]


# ---------------------------------------------------------------------------
# Service state and app
# ---------------------------------------------------------------------------

@dataclass
class ServiceState:
    model: encoder.EncoderModel
    vector_index: VectorIndex
    lexical_index: LexicalIndex
    passages: Mapping[str, Passage]
    autocomplete_queries: list[str] = field(default_factory=list)
    ann: bool = True  # vector searches use the approximate structures
    bm25_params: Bm25Params = field(default_factory=Bm25Params)
    request_log_path: Path | None = None

    @property
    def index_version(self) -> str:
        return (
            f"v{self.vector_index.version}+l{self.lexical_index.version}"
            f"@{self.model.version}"
        )


class FilterModel(BaseModel):
    date_from: date | None = None
    date_to: date | None = None
    tickers: list[str] | None = None
    tags: list[str] | None = None

    def to_filter(self) -> SearchFilter:
        return SearchFilter(
            date_from=self.date_from,
            date_to=self.date_to,
            tickers=frozenset(self.tickers) if self.tickers else None,
            tags=frozenset(self.tags) if self.tags else None,
        )


class SearchRequestModel(BaseModel):
    query: str = Field(min_length=1)
    mode: Literal["vector", "lexical"] = "vector"
    k: int = Field(default=10, ge=1, le=100)
    filter: FilterModel = Field(default_factory=FilterModel)
    highlight: bool = False


def _log_request(state: ServiceState, record: dict) -> None:
    if state.request_log_path is None:
        return
    record["ts"] = datetime.now(timezone.utc).isoformat()
    with open(state.request_log_path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record) + "\n")


def create_app(state: ServiceState | None = None) -> FastAPI:
    """Build the API over an immutable state snapshot; pass None to start
    unloaded (endpoints answer 503 until a snapshot is attached)."""
    app = FastAPI(title="finsearch")
    app.state.search = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def current_state() -> ServiceState | None:
        return app.state.search

    @app.post("/search")
    def search(body: SearchRequestModel):
        state = current_state()
        if state is None:
            return JSONResponse(status_code=503, content={"detail": "index not loaded"})
        started = time.perf_counter()
        search_filter = body.filter.to_filter()
        if body.mode == "vector":
            qvec = encoder.encode(state.model, body.query, "query")
            mode = "approximate" if state.ann else "exact"
            hits = knn(state.vector_index, qvec, body.k, search_filter, mode=mode)
        else:
            hits = bm25_search(
                state.lexical_index, body.query, body.k, search_filter, state.bm25_params
            )
        results = []
        for hit in hits:
            passage = state.passages[hit.passage_id]
            spans: list[Highlight] = []
            if body.highlight:
                spans = highlight(state.model, body.query, passage)
            results.append(
                {
                    "passage_id": hit.passage_id,
                    "doc_id": hit.doc_id,
                    "score": hit.score,
                    "context_line": passage.context_line,
                    "body": passage.body,
                    "highlights": [
                        {"char_start": h.char_start, "char_end": h.char_end, "score": h.score}
                        for h in spans
                    ],
                }
            )
        latency_ms = (time.perf_counter() - started) * 1000.0
        _log_request(
            state,
            {"route": "/search", "mode": body.mode, "k": body.k,
             "n_hits": len(results), "latency_ms": latency_ms},
        )
        return {
            "hits": results,
            "latency_ms": latency_ms,
            "index_version": state.index_version,
        }

    @app.get("/autocomplete")
    def autocomplete_route(prefix: str = "", k: int = 10):
        state = current_state()
        if state is None:
            return JSONResponse(status_code=503, content={"detail": "index not loaded"})
        return {"suggestions": autocomplete(state.autocomplete_queries, prefix, k)}

    @app.get("/passages/{passage_id}")
    def get_passage(passage_id: str):
        state = current_state()
        if state is None:
            return JSONResponse(status_code=503, content={"detail": "index not loaded"})
        passage = state.passages.get(passage_id)
        if passage is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown passage: {passage_id}"})
        return passage.to_dict()

    @app.get("/health")
    def health():
        state = current_state()
        if state is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {
            "status": "ok",
            "index_version": state.index_version,
            "vector_index_version": state.vector_index.version,
            "lexical_index_version": state.lexical_index.version,
            "model_version": state.model.version,
            "passage_count": len(state.passages),
        }

    return app


def build_state(
    model: encoder.EncoderModel,
    passages: Sequence[Passage],
    dataset_pairs: Sequence | None = None,
    ann: bool = True,
    rng_seed: int = 0,
    request_log_path: Path | None = None,
) -> ServiceState:
    """Assemble a serving snapshot from a model and passages. Autocomplete
    draws on val/test-split queries only, never train-split ones."""
    from .index import PassageMeta, build_lexical_index, build_vector_index

    texts = {p.id: p.embed_text() for p in passages}
    metadata = {
        p.id: PassageMeta(doc_id=p.doc_id, date=p.date, ticker=p.ticker, tags=frozenset(p.tags()))
        for p in passages
    }
    vectors = encoder.encode_batch(model, [texts[p.id] for p in passages], "passage")
    embeddings = {p.id: vectors[i] for i, p in enumerate(passages)}
    vector_index = build_vector_index(embeddings, metadata, approximate=ann, rng_seed=rng_seed)
    lexical_index = build_lexical_index(texts, metadata)
    suggestions = []
    if dataset_pairs:
        suggestions = sorted(
            {p.query for p in dataset_pairs if p.split in ("val", "test")}
        )
    return ServiceState(
        model=model,
        vector_index=vector_index,
        lexical_index=lexical_index,
        passages={p.id: p for p in passages},
        autocomplete_queries=suggestions,
        ann=ann,
        request_log_path=request_log_path,
    )
