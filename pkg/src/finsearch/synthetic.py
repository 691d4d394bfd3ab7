"""Seeded synthetic corpus of templated financial documents.

Used by the evaluation harness and the demo CLI: documents are built from
entity/metric/period slots plus generic filler prose, so retrieval quality is
measurable without any proprietary data. A paraphrase variant swaps every
query-side content word for a synonym, yielding a benchmark where lexical
search is blind by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np

from .corpus import Document, Passage, build_passages
from .querygen import (
    FewShotExample,
    GenConfig,
    QueryPair,
    StubClient,
    assign_splits,
    dedup,
    run_generation,
)

_FIRST_NAMES = [
    "Braxton", "Northwind", "Veltrix", "Halcyon", "Quorum", "Summit", "Atlas",
    "Meridian", "Pinnacle", "Sterling", "Cascade", "Orion", "Vantage",
    "Crestline", "Redwood", "Ironbridge", "Bluepeak", "Stonegate", "Fairmont",
    "Granite", "Harborview", "Lakeshore", "Monarch", "Nordvik", "Oakfield",
    "Palmetto", "Quartzline", "Ridgemont", "Silverton", "Trademont",
]

_SECOND_NAMES = [
    "Industries", "Holdings", "Systems", "Energy", "Logistics",
    "Technologies", "Materials", "Foods", "Pharma", "Retail", "Aerospace",
    "Networks", "Dynamics", "Resources", "Partners", "Motors",
]

_DOC_TYPES = ["transcript", "company_report", "news", "broker_research"]

# Metric slots: (phrase used in passages, value formatter key).
_METRICS = [
    ("revenue", "money"),
    ("EPS", "pershare"),
    ("operating margin", "percent"),
    ("capex", "money"),
    ("dividend", "pershare"),
    ("net debt", "money"),
    ("sales growth", "percent"),
    ("buyback", "money"),
    ("order backlog", "money"),
    ("free cash flow", "money"),
]

# Query-side synonyms for the paraphrase benchmark; chosen so the query never
# shares a word with the passage it targets.
PARAPHRASE_METRICS = [
    ("revenue", "turnover"),
    ("EPS", "earnings"),
    ("operating margin", "profitability"),
    ("capex", "outlays"),
    ("dividend", "payout"),
    ("net debt", "borrowings"),
    ("buyback", "repurchases"),
    ("order backlog", "orderbook"),
]

_PERIODS = [
    "FY22", "FY23", "FY24", "FY25",
    "Q1 FY23", "Q2 FY23", "Q3 FY23", "Q4 FY23",
    "Q1 FY24", "Q2 FY24", "Q3 FY24", "Q4 FY24",
]

_FACT_TEMPLATES = [
    "{company} reported {metric} of {value} for {period}.",
    "{company} ({ticker}) posted {metric} of {value} in {period}.",
    "For {period}, {company} delivered {metric} of {value}.",
    "{company} management guided {period} {metric} to {value}.",
    "In {period}, {company} came in with {metric} at {value}.",
]

_COMPARE_TEMPLATES = [
    "That compares with {value} in the prior year.",
    "The figure was {value} a year earlier.",
    "Consensus had modeled {value} for the same stretch.",
]

# Filler prose: deliberately free of digits, metric words, capitalized
# multi-word spans, and the paraphrase synonym vocabulary.
_FILLERS = [
    "The leadership team walked through the operating environment in considerable detail.",
    "Analysts on the call pressed for clarity around the pace of the recovery.",
    "Management described demand trends as steady across most end markets.",
    "The discussion then turned to supply conditions and vendor lead times.",
    "Executives reiterated their focus on disciplined execution over the coming quarters.",
    "Several questions touched on the competitive landscape and pricing behaviour.",
    "The company highlighted continued investment in its distribution footprint.",
    "Commentary suggested input cost pressure is easing from recent peaks.",
    "Management noted that customer conversations remain constructive overall.",
    "The team emphasised operational efficiency programs already underway.",
    "Prepared remarks covered regional performance and channel dynamics at length.",
    "Leadership cautioned that the macro backdrop remains difficult to read.",
    "The presentation included an update on the multi-year transformation plan.",
    "Executives fielded questions about capacity utilisation across the network.",
    "Management pointed to healthy engagement from enterprise accounts.",
    "The call closed with remarks on sustainability initiatives and governance.",
    "Commentary indicated inventory levels have normalised through the channel.",
    "The team discussed hiring plans and the broader labour environment.",
    "Several participants asked about the timing of new product introductions.",
    "Management framed the quarter as consistent with the plan laid out previously.",
    "Leadership described the pipeline of opportunities as encouraging.",
    "The company reviewed progress against previously announced cost actions.",
    "Executives stressed that the balance of the year depends on seasonal patterns.",
    "Discussion covered the integration of recently acquired operations.",
    "Management offered colour on regional demand differences during the question session.",
    "The team addressed questions about contract renewals and customer retention.",
    "Prepared remarks acknowledged currency movements as a persistent swing factor.",
    "Leadership repeated that the strategic priorities remain unchanged this cycle.",
    "The company described ongoing automation efforts across its facilities.",
    "Executives noted that promotional intensity stayed rational in the period.",
    "Commentary covered the regulatory environment and pending policy changes.",
    "Management closed by thanking employees for their continued commitment.",
    "The discussion returned repeatedly to execution risk around the expansion.",
    "Several analysts probed the durability of recent share gains.",
    "The team characterised the funnel of new business as broadly stable.",
    "Leadership declined to extend its view beyond the current horizon.",
]

EXAMPLE_POOL = [
    FewShotExample(
        "Acme Corp (ACME) | FY23 earnings call | 2023-05-01\nAcme Corp reported "
        "revenue of $3.1 billion for FY23, ahead of consensus.",
        "Acme FY23 revenue beat",
    ),
    FewShotExample(
        "news | mill_announcement.txt | 2023-07-14\nThe paper producer said new "
        "pulpwood costs continue to climb across the region.",
        "What is going on with pulpwood costs?",
    ),
    FewShotExample(
        "Globex Industries (GLX) | Q2 FY24 earnings call | 2024-01-20\nManagement "
        "guided Q2 FY24 capex to $450 million, citing new capacity.",
        "Globex capital spending plans",
    ),
    FewShotExample(
        "company_report | initech_annual.txt | 2023-03-30\nInitech's board approved "
        "a $2 billion buyback and raised the dividend by 8%.",
        "Initech shareholder returns",
    ),
    FewShotExample(
        "broker_research | semis_note.txt | 2024-02-11\nWe see memory pricing "
        "inflecting in the second half as inventories normalise.",
        "memory price outlook second half",
    ),
    FewShotExample(
        "transcript | retailer_q3.txt | 2023-11-02\nThe retailer flagged softer "
        "discretionary demand but stronger grocery volumes in Q3.",
        "retail discretionary vs grocery demand",
    ),
    FewShotExample(
        "news | airline_fuel.txt | 2023-09-18\nCarriers are hedging a larger share "
        "of fuel needs amid volatile crude prices.",
        "airline fuel hedging strategy",
    ),
    FewShotExample(
        "company_report | steelco_fy22.txt | 2022-12-01\nSteelCo cut net debt by a "
        "third and extended maturities into 2027.",
        "SteelCo balance sheet deleveraging",
    ),
]


def _ticker_for(name_parts: tuple[str, str], used: set[str]) -> str:
    base = (name_parts[0][:3] + name_parts[1][0]).upper()
    ticker = base
    suffix = 0
    while ticker in used:
        ticker = base[:3] + chr(ord("A") + suffix)
        suffix += 1
    used.add(ticker)
    return ticker


def _value_for(kind: str, rng: np.random.Generator) -> str:
    if kind == "money":
        if rng.random() < 0.5:
            return f"${rng.integers(1, 95) / 10:.1f} billion"
        return f"${int(rng.integers(40, 980))} million"
    if kind == "pershare":
        return f"${rng.integers(20, 900) / 100:.2f}"
    return f"{rng.integers(15, 400) / 10:.1f}%"


def _period_date(period: str, rng: np.random.Generator) -> date:
    parts = period.split()
    fy = int(parts[-1][-2:]) + 2000
    month = 6 if len(parts) == 1 else 3 * int(parts[0][1]) - 1
    return date(fy, month, int(rng.integers(1, 28)))


@dataclass
class Benchmark:
    documents: list[Document]
    passages: list[Passage]
    pairs: list[QueryPair]
    passage_texts: dict[str, str]
    doc_of: dict[str, str]

    def pairs_in(self, split: str) -> list[QueryPair]:
        return [p for p in self.pairs if p.split == split]

    def doc_ids_in(self, split: str) -> set[str]:
        return {self.doc_of[p.positive_passage_id] for p in self.pairs_in(split)}


def _company_table(n_companies: int, rng: np.random.Generator):
    combos = [(f, s) for f in _FIRST_NAMES for s in _SECOND_NAMES]
    order = rng.permutation(len(combos))
    used_tickers: set[str] = set()
    companies = []
    for idx in order[:n_companies]:
        parts = combos[int(idx)]
        companies.append((f"{parts[0]} {parts[1]}", _ticker_for(parts, used_tickers)))
    return companies


def _paragraph(
    company: str,
    ticker: str,
    metric: str,
    value_kind: str,
    period: str,
    rng: np.random.Generator,
    filler_sentences: int,
) -> str:
    fact = rng.choice(_FACT_TEMPLATES).format(
        company=company,
        ticker=ticker,
        metric=metric,
        value=_value_for(value_kind, rng),
        period=period,
    )
    sentences = [fact]
    if rng.random() < 0.5:
        sentences.append(rng.choice(_COMPARE_TEMPLATES).format(value=_value_for(value_kind, rng)))
    picks = rng.choice(len(_FILLERS), size=min(filler_sentences, len(_FILLERS)), replace=False)
    sentences.extend(_FILLERS[i] for i in picks)
    return " ".join(sentences)


def build_documents(
    n_companies: int = 120,
    docs_per_company: int = 5,
    passages_per_doc: int = 10,
    rng_seed: int = 7,
    filler_sentences: int = 26,
) -> list[Document]:
    """Templated corpus: each paragraph carries one (company, metric, period)
    fact inside generic filler prose, sized so the splitter emits roughly one
    passage per paragraph at the default 512-token cap."""
    rng = np.random.default_rng(rng_seed)
    companies = _company_table(n_companies, rng)
    documents = []
    for ci, (company, ticker) in enumerate(companies):
        slots = [(m, p) for m in range(len(_METRICS)) for p in range(len(_PERIODS))]
        slot_order = rng.permutation(len(slots))
        cursor = 0
        for di in range(docs_per_company):
            doc_type = _DOC_TYPES[di % len(_DOC_TYPES)]
            paragraphs = []
            doc_period = None
            for _ in range(passages_per_doc):
                mi, pi = slots[int(slot_order[cursor % len(slots)])]
                cursor += 1
                metric, value_kind = _METRICS[mi]
                period = _PERIODS[pi]
                doc_period = doc_period or period
                paragraphs.append(
                    _paragraph(company, ticker, metric, value_kind, period, rng, filler_sentences)
                )
            doc_id = f"doc-{ci:03d}-{di}"
            doc_date = _period_date(doc_period, rng)
            event = f"{doc_period} earnings call" if doc_type == "transcript" else None
            documents.append(
                Document(
                    id=doc_id,
                    doc_type=doc_type,
                    date=doc_date,
                    filename=f"{ticker.lower()}_{di}.txt",
                    body="\n\n".join(paragraphs),
                    company_name=company,
                    ticker=ticker,
                    event=event,
                )
            )
    return documents


def prepare_benchmark(
    n_companies: int = 120,
    docs_per_company: int = 5,
    passages_per_doc: int = 10,
    rng_seed: int = 7,
    split_ratios: Sequence[float] = (0.8, 0.1, 0.1),
    max_tokens: int = 512,
    filler_sentences: int = 26,
) -> Benchmark:
    """Full dataset build: documents -> passages -> stub queries -> dedup ->
    document-grouped splits."""
    documents = build_documents(
        n_companies, docs_per_company, passages_per_doc, rng_seed, filler_sentences
    )
    passages = build_passages(documents, max_tokens=max_tokens)
    _, pairs = run_generation(
        StubClient(rng_seed), passages, EXAMPLE_POOL, GenConfig(rng_seed=rng_seed)
    )
    pairs = dedup(pairs)
    doc_of = {p.id: p.doc_id for p in passages}
    pairs = assign_splits(pairs, doc_of, ratios=tuple(split_ratios), rng_seed=rng_seed)
    return Benchmark(
        documents=documents,
        passages=passages,
        pairs=pairs,
        passage_texts={p.id: p.embed_text() for p in passages},
        doc_of=doc_of,
    )


def build_paraphrase_benchmark(
    n_companies: int = 64,
    docs_per_company: int = 4,
    passages_per_doc: int = 2,
    rng_seed: int = 11,
    split_ratios: Sequence[float] = (0.8, 0.1, 0.1),
    filler_sentences: int = 3,
) -> Benchmark:
    """Benchmark whose queries share no words with their gold passages.

    Each (company, metric) pair appears in exactly one passage; the query for
    it is "<alias> <metric synonym>", where the alias is a token that never
    occurs in any passage. Lexical retrieval scores zero by construction.
    """
    rng = np.random.default_rng(rng_seed)
    companies = _company_table(n_companies, rng)
    aliases = {ticker: f"{ticker.lower()}x" for _, ticker in companies}
    documents = []
    facts: list[tuple[str, str, str]] = []  # (doc_id, fact sentence, query)
    for ci, (company, ticker) in enumerate(companies):
        metric_order = rng.permutation(len(PARAPHRASE_METRICS))
        cursor = 0
        for di in range(docs_per_company):
            doc_id = f"pp-{ci:03d}-{di}"
            doc_type = _DOC_TYPES[di % len(_DOC_TYPES)]
            paragraphs = []
            for _ in range(passages_per_doc):
                passage_metric, query_metric = PARAPHRASE_METRICS[
                    int(metric_order[cursor % len(PARAPHRASE_METRICS)])
                ]
                cursor += 1
                period = _PERIODS[int(rng.integers(0, len(_PERIODS)))]
                kind = "percent" if "margin" in passage_metric else "money"
                paragraph = _paragraph(
                    company, ticker, passage_metric, kind, period, rng, filler_sentences
                )
                fact_sentence = paragraph.split(". ")[0]
                facts.append((doc_id, fact_sentence, f"{aliases[ticker]} {query_metric}"))
                paragraphs.append(paragraph)
            event = "results presentation" if doc_type == "transcript" else None
            documents.append(
                Document(
                    id=doc_id,
                    doc_type=doc_type,
                    date=_period_date(_PERIODS[int(rng.integers(0, len(_PERIODS)))], rng),
                    filename=f"{ticker.lower()}_pp{di}.txt",
                    body="\n\n".join(paragraphs),
                    company_name=company,
                    ticker=ticker,
                    event=event,
                )
            )
    passages = build_passages(documents, max_tokens=512)
    by_doc: dict[str, list[Passage]] = {}
    for p in passages:
        by_doc.setdefault(p.doc_id, []).append(p)
    # A fact sentence occurs in exactly one passage of its document, however
    # the splitter packed the paragraphs.
    pairs = []
    for doc_id, fact_sentence, query in facts:
        holders = [p for p in by_doc[doc_id] if fact_sentence in p.body]
        if len(holders) != 1:
            raise RuntimeError(f"fact not uniquely located in {doc_id}: {fact_sentence!r}")
        pairs.append(
            QueryPair(
                query_id=f"q-{holders[0].id}-{len(pairs)}",
                query=query,
                positive_passage_id=holders[0].id,
            )
        )
    pairs = dedup(pairs)
    doc_of = {p.id: p.doc_id for p in passages}
    pairs = assign_splits(pairs, doc_of, ratios=tuple(split_ratios), rng_seed=rng_seed)
    return Benchmark(
        documents=documents,
        passages=passages,
        pairs=pairs,
        passage_texts={p.id: p.embed_text() for p in passages},
        doc_of=doc_of,
    )
