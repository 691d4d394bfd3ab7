"""Synthetic query generation, filtering, dedup, and document-grouped splits.

One query is generated per passage by a few-shot prompted LLM; a deterministic
offline stub is the default client so the pipeline runs with no network.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_SKIPPED = "skipped"
STATUS_FAILURE_PHRASE = "failure_phrase"
STATUS_EMPTY = "empty"
STATUS_TRANSIENT = "transient_error"

SPLITS = ("train", "val", "test")

DEFAULT_FAILURE_PHRASES = ("no query", "no question", "understood")

DEFAULT_SPLIT_RATIOS = (0.942, 0.029, 0.029)

DOC_TYPE_LABELS = {
    "transcript": "transcript of a company presentation",
    "company_report": "a company report",
    "broker_research": "a broker research report",
    "news": "a financial news article",
    "other": "a financial document",
}

PROMPT_TEMPLATE = """You are a highly trained investment analyst, and an expert in business and financial markets. You are helping construct a dataset to train a world class financial search engine. You will be given a text snippet from <DOCUMENT_TYPE>. Your task is to generate a query derived from the provided text snippet.

Detailed Instructions:
1. The query should be a question, or a set of keywords or phrases, such that the text snippet should be returned as a top search result for that query.
2. A good query is closely related to at least some, but not necessarily all, of the content in the text snippet. Do not create queries containing many unrelated concepts.
3. Broad queries about entire industries, sectors, regions, or macro trends are okay, as long as the text snippet contains specific information that is relevant to the query.
4. You will be penalized if your query contains too many words and phrases copied directly from the text snippet. Use paraphrasing, synonyms, summarization, and your knowledge of appropriate abbreviations, acronyms and specialized terminology to construct queries. For example, if the text snippet contains the phrase "earnings per share", the query could instead include the acronym "EPS". If the text snippet mentions "earnings guidance for 2020-2024", the query could be for "long-term profit outlook".
5. Do not include 10k or 10q references in your queries.

Formatting Instructions:
1. Always reply with the query only, on a single line. Do not provide any additional context, note, or explanation of any kind. Do not put the query in quotation marks (",'). Do not include html tags in the query.
2. Queries can contain a maximum of 10 words.
3. If the text snippet is very short, difficult to understand, not written in English, or if it contains only boilerplate investment risk disclosures or disclaimers, you must begin your response with the special output "SKIP".

Text Snippet:
<EXAMPLE_PASSAGE_1>

Query:
<EXAMPLE_QUERY_1>

Text Snippet:
<EXAMPLE_PASSAGE_2>

Query:
<EXAMPLE_QUERY_2>

Text Snippet:
<SAMPLED_PASSAGE>

Query:
"""


class TransportError(Exception):
    """Raised by clients on network/transport failure (retryable)."""


@dataclass(frozen=True)
class FewShotExample:
    passage_text: str
    query: str

    def __post_init__(self):
        if len(self.query.split()) > 10:
            raise ValueError(f"few-shot query exceeds 10 words: {self.query!r}")


@dataclass(frozen=True)
class QueryPair:
    query_id: str
    query: str
    positive_passage_id: str
    split: str | None = None
    hard_negative_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "query": self.query,
            "positive_passage_id": self.positive_passage_id,
            "split": self.split,
            "hard_negative_ids": list(self.hard_negative_ids),
        }


def pair_from_dict(rec: dict) -> QueryPair:
    return QueryPair(
        query_id=rec["query_id"],
        query=rec["query"],
        positive_passage_id=rec["positive_passage_id"],
        split=rec.get("split"),
        hard_negative_ids=tuple(rec.get("hard_negative_ids") or ()),
    )


@dataclass(frozen=True)
class GenerationOutcome:
    passage_id: str
    status: str
    raw_response: str
    query: str | None = None

    def to_dict(self) -> dict:
        return {
            "passage_id": self.passage_id,
            "status": self.status,
            "raw_response": self.raw_response,
            "query": self.query,
        }


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------

def _stable_seed(*parts) -> int:
    digest = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def sample_examples(pool: Sequence[FewShotExample], rng_seed: int) -> tuple[FewShotExample, FewShotExample]:
    """Two distinct few-shot examples, drawn uniformly with a seeded RNG."""
    if len(pool) < 2:
        raise ValueError(f"few-shot pool needs at least 2 examples, has {len(pool)}")
    rng = np.random.default_rng(rng_seed)
    i, j = rng.choice(len(pool), size=2, replace=False)
    return pool[int(i)], pool[int(j)]


def build_prompt(
    passage_text: str,
    examples: tuple[FewShotExample, FewShotExample],
    doc_type_label: str,
) -> str:
    """Render the generation prompt; byte-stable for fixed inputs."""
    if len(examples) != 2:
        raise ValueError("exactly 2 few-shot examples required")
    return (
        PROMPT_TEMPLATE.replace("<DOCUMENT_TYPE>", doc_type_label)
        .replace("<EXAMPLE_PASSAGE_1>", examples[0].passage_text)
        .replace("<EXAMPLE_QUERY_1>", examples[0].query)
        .replace("<EXAMPLE_PASSAGE_2>", examples[1].passage_text)
        .replace("<EXAMPLE_QUERY_2>", examples[1].query)
        .replace("<SAMPLED_PASSAGE>", passage_text)
    )


def classify_response(raw: str, failure_phrases: Sequence[str] = DEFAULT_FAILURE_PHRASES) -> str:
    """Bucket a raw LLM response into ok / skipped / failure_phrase / empty."""
    text = raw.strip()
    if not text:
        return STATUS_EMPTY
    lowered = text.lower()
    if lowered.startswith("skip"):
        return STATUS_SKIPPED
    for phrase in failure_phrases:
        if lowered.startswith(phrase.lower()):
            return STATUS_FAILURE_PHRASE
    return STATUS_OK


def clean_query(raw: str) -> str:
    """First line only, surrounding quotes stripped."""
    line = raw.strip().splitlines()[0].strip()
    return line.strip("\"'").strip()


# ---------------------------------------------------------------------------
# Deterministic offline stub
# ---------------------------------------------------------------------------

_CAP_SPAN_RE = re.compile(r"\b(?:[A-Z][a-z]+)(?:[ \t](?:[A-Z][a-z]+)){1,3}\b")
_TICKER_RE = re.compile(r"\b[A-Z]{2,6}\b")
_PERIOD_RE = re.compile(r"(?<![-\d])(?:FY\d{2,4}|[QH][1-4](?:\s?FY\d{2,4})?|20\d{2})(?![-\d])")
# Standalone amounts only: no digits inside words (Q2) or date components.
_NUMBER_RE = re.compile(r"(?<![\w$€£-])[$€£]?\d[\d,.]*%?(?![\w-])")
_WORDY_RE = re.compile(r"[A-Za-z][\w-]*$")

METRIC_WORDS = frozenset(
    """revenue revenues eps earnings margin margins guidance outlook capex dividend
    dividends sales profit income turnover expenditure buyback backlog growth debt
    cash flow ebitda""".split()
)

_STOPWORDS = frozenset("of the a an to in for on at by with and or is was were be".split())


def extract_salient_terms(text: str) -> dict[str, list[str]]:
    """Salient spans of a passage: capitalized multi-word spans, tickers,
    period tokens, number-adjacent words, and metric-lexicon words."""
    cap_spans = _CAP_SPAN_RE.findall(text)
    tickers = [t for t in _TICKER_RE.findall(text) if t.lower() not in METRIC_WORDS]
    periods = [p.strip() for p in _PERIOD_RE.findall(text)]
    number_adjacent = []
    for match in _NUMBER_RE.finditer(text):
        before = text[: match.start()].split()
        for word in reversed(before[-2:]):
            bare = word.strip(".,;:()|-")
            if bare and _WORDY_RE.fullmatch(bare) and bare.lower() not in _STOPWORDS:
                number_adjacent.append(bare)
                break
    words = {w.lower().strip(".,;:()|-") for w in text.split()}
    metrics = sorted(METRIC_WORDS & words)
    return {
        "entities": list(dict.fromkeys(cap_spans)),
        "tickers": list(dict.fromkeys(tickers)),
        "periods": list(dict.fromkeys(periods)),
        "number_adjacent": list(dict.fromkeys(number_adjacent)),
        "metrics": metrics,
    }


def salient_vocabulary(text: str) -> set[str]:
    """Lowercased word set a stub query may draw from (used by tests)."""
    terms = extract_salient_terms(text)
    vocab: set[str] = set()
    for values in terms.values():
        for span in values:
            vocab.update(w.lower() for w in span.split())
    return vocab


def stub_generate(passage_text: str, rng_seed: int = 0) -> str:
    """Deterministic offline substitute for the LLM: compose a 2-8 word query
    from salient passage spans, or return "SKIP" when the passage has too few.
    """
    terms = extract_salient_terms(passage_text)
    spans = terms["entities"] + terms["tickers"]
    extras = terms["periods"] + terms["metrics"] + terms["number_adjacent"]
    n_salient = len(spans) + len(extras)
    if n_salient < 2:
        return "SKIP"
    rng = np.random.default_rng(_stable_seed(rng_seed, passage_text))
    parts: list[str] = []
    used: set[str] = set()

    def push(span: str) -> None:
        parts.append(span)
        used.update(w.lower() for w in span.split())

    if spans:
        push(spans[0])
        if len(spans) > 1 and rng.random() < 0.2:
            push(spans[1])
    candidates = [e for e in extras]
    rng.shuffle(candidates)
    for extra in candidates:
        if any(w.lower() in used for w in extra.split()):
            continue
        if len(" ".join(parts + [extra]).split()) <= 8:
            push(extra)
        if len(parts) >= 3 and rng.random() < 0.6:
            break
    query_words = " ".join(parts).split()
    if len(query_words) < 2:
        return "SKIP"
    return " ".join(query_words[:8])


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------

class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class StubClient:
    """Offline client: recovers the sampled passage from the rendered prompt
    and answers with stub_generate."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = rng_seed

    def complete(self, prompt: str) -> str:
        marker = "Text Snippet:\n"
        start = prompt.rindex(marker) + len(marker)
        end = prompt.rindex("\n\nQuery:")
        return stub_generate(prompt[start:end], self.rng_seed)


class HttpChatClient:
    """Minimal JSON chat-completion client (OpenAI-compatible wire format)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        token_env: str = "FINSEARCH_LLM_TOKEN",
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token_env = token_env
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json={
                    "model": self.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": 0.7,
                },
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        return resp.json()["choices"][0]["message"]["content"]


# ---------------------------------------------------------------------------
# Generation driver
# ---------------------------------------------------------------------------

@dataclass
class GenConfig:
    rng_seed: int = 0
    max_retries: int = 2
    max_workers: int = 1
    failure_phrases: tuple[str, ...] = DEFAULT_FAILURE_PHRASES


def generate_query(
    client: LlmClient,
    passage,
    pool: Sequence[FewShotExample],
    config: GenConfig,
) -> GenerationOutcome:
    """One generation attempt for one passage (with transport retries)."""
    examples = sample_examples(pool, _stable_seed(config.rng_seed, passage.id))
    label = DOC_TYPE_LABELS.get(passage.doc_type or "other", DOC_TYPE_LABELS["other"])
    prompt = build_prompt(passage.embed_text(), examples, label)
    raw = None
    for attempt in range(config.max_retries + 1):
        try:
            raw = client.complete(prompt)
            break
        except TransportError as exc:
            logger.warning("transport failure for %s (attempt %d): %s", passage.id, attempt, exc)
    if raw is None:
        return GenerationOutcome(passage.id, STATUS_TRANSIENT, "")
    status = classify_response(raw, config.failure_phrases)
    if status != STATUS_OK:
        return GenerationOutcome(passage.id, status, raw)
    query = clean_query(raw)
    if not query:
        return GenerationOutcome(passage.id, STATUS_EMPTY, raw)
    n_words = len(query.split())
    if n_words > 10:
        logger.warning("query for %s has %d words (>10), keeping as-is", passage.id, n_words)
    return GenerationOutcome(passage.id, STATUS_OK, raw, query=query)


def run_generation(
    client: LlmClient,
    passages: Sequence,
    pool: Sequence[FewShotExample],
    config: GenConfig | None = None,
) -> tuple[list[GenerationOutcome], list[QueryPair]]:
    """Generate one query per passage; transient failures are re-queued once.

    Outcomes are returned in passage order regardless of completion order.
    """
    config = config or GenConfig()

    def attempt(batch):
        if config.max_workers > 1:
            with ThreadPoolExecutor(max_workers=config.max_workers) as pool_exec:
                return list(pool_exec.map(lambda p: generate_query(client, p, pool, config), batch))
        return [generate_query(client, p, pool, config) for p in batch]

    outcomes = attempt(passages)
    retry_idx = [i for i, o in enumerate(outcomes) if o.status == STATUS_TRANSIENT]
    if retry_idx:
        logger.info("re-queueing %d passages after transport failures", len(retry_idx))
        retried = attempt([passages[i] for i in retry_idx])
        for i, outcome in zip(retry_idx, retried):
            outcomes[i] = outcome

    pairs = [
        QueryPair(query_id=f"q-{o.passage_id}", query=o.query, positive_passage_id=o.passage_id)
        for o in outcomes
        if o.status == STATUS_OK and o.query
    ]
    return outcomes, pairs


# ---------------------------------------------------------------------------
# Dedup and splits
# ---------------------------------------------------------------------------

def normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


def dedup(pairs: Sequence[QueryPair]) -> list[QueryPair]:
    """Remove every pair whose normalized query occurs more than once: a
    duplicated query has an ambiguous positive, so all copies go."""
    counts: dict[str, int] = {}
    for pair in pairs:
        key = normalize_query(pair.query)
        counts[key] = counts.get(key, 0) + 1
    kept = [p for p in pairs if counts[normalize_query(p.query)] == 1]
    dropped = len(pairs) - len(kept)
    if dropped:
        logger.info("dedup removed %d pairs with duplicated queries", dropped)
    return kept


def split_for_document(doc_id: str, ratios: Sequence[float], rng_seed: int) -> str:
    """Stable seeded-hash split assignment for one document id."""
    u = _stable_seed(rng_seed, doc_id) / 2**64
    if u < ratios[0]:
        return "train"
    if u < ratios[0] + ratios[1]:
        return "val"
    return "test"


def assign_splits(
    pairs: Sequence[QueryPair],
    doc_of: Mapping[str, str],
    ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
    rng_seed: int = 0,
) -> list[QueryPair]:
    """Assign train/val/test per *document* so sibling passages never straddle
    splits. doc_of maps positive passage id -> document id."""
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError(f"ratios must be 3 values summing to 1, got {ratios}")
    out = []
    for pair in pairs:
        doc_id = doc_of[pair.positive_passage_id]
        out.append(replace(pair, split=split_for_document(doc_id, ratios, rng_seed)))
    return out
