"""Document ingest, boilerplate stripping, and token-bounded passage splitting.

Documents arrive as plain-text records (JSONL); passages carry a one-line
document context that is prepended identically at dataset build, training,
and serving time (Passage.embed_text is that single code path).
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Callable, Iterable, Sequence

from . import encoder

logger = logging.getLogger(__name__)

DOC_TYPES = ("transcript", "company_report", "broker_research", "news", "other")

DEFAULT_SEPARATORS = ("\n\n", "\n", ". ", " ")

# Characters counted by the table heuristic (numeric/tabular noise).
_TABLE_CHARS = set("0123456789|\t%$")
_TABLE_RATIO = 0.6
_TABLE_MIN_RUN = 3


class IngestError(ValueError):
    """Raised for malformed or duplicate input records."""


class RuleError(ValueError):
    """Raised for malformed boilerplate rules at load time."""


@dataclass(frozen=True)
class Document:
    id: str
    doc_type: str
    date: date
    filename: str
    body: str
    company_name: str | None = None
    ticker: str | None = None
    event: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "doc_type": self.doc_type,
            "date": self.date.isoformat(),
            "filename": self.filename,
            "body": self.body,
            "company_name": self.company_name,
            "ticker": self.ticker,
            "event": self.event,
        }


@dataclass(frozen=True)
class Passage:
    id: str
    doc_id: str
    ordinal: int
    context_line: str
    body: str
    token_count: int
    # Filterable metadata carried over from the parent document.
    date: date | None = None
    ticker: str | None = None
    doc_type: str | None = None
    event: str | None = None
    filename: str | None = None

    def embed_text(self) -> str:
        """Context line + body: the one text every consumer embeds."""
        return f"{self.context_line}\n{self.body}"

    def tags(self) -> set[str]:
        out = set()
        if self.doc_type:
            out.add(self.doc_type)
        if self.event:
            out.add(self.event)
        return out

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "ordinal": self.ordinal,
            "context_line": self.context_line,
            "body": self.body,
            "token_count": self.token_count,
            "date": self.date.isoformat() if self.date else None,
            "ticker": self.ticker,
            "doc_type": self.doc_type,
            "event": self.event,
            "filename": self.filename,
        }


def passage_from_dict(rec: dict) -> Passage:
    return Passage(
        id=rec["id"],
        doc_id=rec["doc_id"],
        ordinal=rec["ordinal"],
        context_line=rec["context_line"],
        body=rec["body"],
        token_count=rec["token_count"],
        date=date.fromisoformat(rec["date"]) if rec.get("date") else None,
        ticker=rec.get("ticker"),
        doc_type=rec.get("doc_type"),
        event=rec.get("event"),
        filename=rec.get("filename"),
    )


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------

_CONTROL_RE = re.compile(r"[\x00-\x08\x0b-\x1f\x7f]")


def _parse_date(value) -> date:
    if isinstance(value, date):
        return value
    try:
        return datetime.strptime(str(value), "%Y-%m-%d").date()
    except ValueError as exc:
        raise IngestError(f"unparseable date: {value!r}") from exc


def ingest(record: dict, seen_ids: set[str] | None = None) -> Document:
    """Normalize one raw document record into a Document.

    Line endings become "\\n"; control characters other than "\\n"/"\\t" are
    removed. seen_ids, when given, enforces id uniqueness across a corpus.
    """
    for field_name in ("id", "date", "doc_type", "body"):
        if record.get(field_name) in (None, ""):
            raise IngestError(f"missing field: {field_name}")
    doc_id = str(record["id"])
    if seen_ids is not None:
        if doc_id in seen_ids:
            raise IngestError(f"duplicate id: {doc_id}")
        seen_ids.add(doc_id)
    doc_type = record["doc_type"]
    if doc_type not in DOC_TYPES:
        raise IngestError(f"unknown doc_type: {doc_type!r}")
    body = str(record["body"]).replace("\r\n", "\n").replace("\r", "\n")
    body = _CONTROL_RE.sub("", body)
    return Document(
        id=doc_id,
        doc_type=doc_type,
        date=_parse_date(record["date"]),
        filename=record.get("filename") or f"{doc_id}.txt",
        body=body,
        company_name=record.get("company_name"),
        ticker=record.get("ticker"),
        event=record.get("event"),
    )


# ---------------------------------------------------------------------------
# Boilerplate stripping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoilerplateRule:
    pattern: re.Pattern
    action: str  # drop_line | drop_block


def load_rules(entries: Iterable) -> list[BoilerplateRule]:
    """Compile an ordered (pattern, action) rule list; bad input fails here."""
    rules = []
    for entry in entries:
        if isinstance(entry, dict):
            pattern, action = entry.get("pattern"), entry.get("action")
        else:
            pattern, action = entry
        if action not in ("drop_line", "drop_block"):
            raise RuleError(f"unknown action: {action!r}")
        try:
            compiled = re.compile(pattern)
        except re.error as exc:
            raise RuleError(f"bad pattern {pattern!r}: {exc}") from exc
        rules.append(BoilerplateRule(compiled, action))
    return rules


DEFAULT_RULES = load_rules(
    [
        (r"(?i)^\s*important\s+disclosures?\b", "drop_block"),
        (r"(?i)^\s*legal\s+disclaimers?\b", "drop_block"),
        (r"(?i)^\s*safe\s+harbor\s+statement\b", "drop_block"),
        (r"(?i)this (?:document|report|material) is provided for information", "drop_line"),
    ]
)


def _is_table_line(line: str) -> bool:
    # Tabs count toward the tabular set, so only plain spaces are excluded.
    chars = [c for c in line if c != " "]
    if not chars:
        return False
    hits = sum(1 for c in chars if c in _TABLE_CHARS)
    return hits / len(chars) > _TABLE_RATIO


def _drop_table_runs(lines: list[str]) -> list[str]:
    flags = [_is_table_line(l) for l in lines]
    keep = [True] * len(lines)
    i = 0
    while i < len(lines):
        if flags[i]:
            j = i
            while j < len(lines) and flags[j]:
                j += 1
            if j - i >= _TABLE_MIN_RUN:
                for k in range(i, j):
                    keep[k] = False
            i = j
        else:
            i += 1
    return [l for l, k in zip(lines, keep) if k]


def strip_boilerplate(
    text: str,
    rules: Sequence[BoilerplateRule] = DEFAULT_RULES,
    drop_tables: bool = True,
) -> str:
    """Remove rule-matched regions and dense numeric table runs.

    drop_line removes the matching line; drop_block removes the matching line
    and everything up to the next blank line (or EOF). Idempotent.
    """
    lines = text.split("\n")
    keep = [True] * len(lines)
    for rule in rules:
        for i, line in enumerate(lines):
            if not keep[i] or not rule.pattern.search(line):
                continue
            keep[i] = False
            if rule.action == "drop_block":
                j = i + 1
                while j < len(lines) and lines[j].strip():
                    keep[j] = False
                    j += 1
    lines = [l for l, k in zip(lines, keep) if k]
    if drop_tables:
        lines = _drop_table_runs(lines)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Context line
# ---------------------------------------------------------------------------

def make_context_line(doc: Document) -> str:
    """One line of document context, prepended to every passage.

    Transcripts: "<company> (<ticker>) | <event> | <date>"; other types lead
    with the doc_type label. Missing optional fields drop out with their
    delimiter.
    """
    date_str = doc.date.isoformat()
    if doc.doc_type == "transcript":
        if doc.company_name and doc.ticker:
            name = f"{doc.company_name} ({doc.ticker})"
        else:
            name = doc.company_name or doc.ticker
        parts = [name, doc.event, date_str]
    else:
        parts = [doc.doc_type, doc.company_name or doc.filename, date_str]
    line = " | ".join(p for p in parts if p)
    return line.replace("\n", " ")


# ---------------------------------------------------------------------------
# Passage splitting
# ---------------------------------------------------------------------------

def _split_recursive(
    text: str, budget: int, separators: Sequence[str], counter: Callable[[str], int],
    warnings: list[str],
) -> list[str]:
    """Split text into segments of <= budget tokens, separators kept attached
    to the segment they terminate so concatenation reproduces the input."""
    if counter(text) <= budget:
        return [text] if text else []
    for i, sep in enumerate(separators):
        if sep not in text:
            continue
        raw = text.split(sep)
        parts = [p + sep for p in raw[:-1]] + ([raw[-1]] if raw[-1] else [])
        segments: list[str] = []
        for part in parts:
            if counter(part) <= budget:
                segments.append(part)
            else:
                segments.extend(
                    _split_recursive(part, budget, separators[i + 1 :], counter, warnings)
                )
        return segments
    # No separator applies: hard-truncate by characters until each piece fits.
    warnings.append(f"hard-truncated unsplittable segment: {text[:60]!r}...")
    logger.warning("hard-truncating unsplittable segment of %d chars", len(text))
    pieces = []
    remaining = text
    while remaining:
        window = len(remaining)
        while window > 1 and counter(remaining[:window]) > budget:
            window //= 2
        pieces.append(remaining[:window])
        remaining = remaining[window:]
    return pieces


def _ends_with_question(segment: str) -> bool:
    return segment.rstrip().endswith("?")


def split_passages(
    doc: Document,
    max_tokens: int = 512,
    separators: Sequence[str] = DEFAULT_SEPARATORS,
    token_counter: Callable[[str], int] | None = None,
    id_prefix: str | None = None,
) -> list[Passage]:
    """Split a document body into passages of at most max_tokens encoder
    tokens (context line included in the count).

    In transcripts, a segment ending in "?" stays in the same passage as the
    following segment whenever the two fit together.
    """
    if max_tokens < 32:
        raise ValueError(f"max_tokens must be >= 32, got {max_tokens}")
    counter = token_counter or (lambda t: len(encoder.split_words(t)))
    context_line = make_context_line(doc)
    budget = max_tokens - counter(context_line)
    if budget < 1:
        raise ValueError(f"context line alone exceeds max_tokens for doc {doc.id}")

    warnings: list[str] = []
    segments = _split_recursive(doc.body, budget, list(separators), counter, warnings)
    segments = [s for s in segments if s.strip()]

    # Bind transcript question segments to the segment that follows.
    units: list[str] = []
    i = 0
    while i < len(segments):
        seg = segments[i]
        if (
            doc.doc_type == "transcript"
            and i + 1 < len(segments)
            and _ends_with_question(seg)
            and counter(seg) + counter(segments[i + 1]) <= budget
        ):
            units.append(seg + segments[i + 1])
            i += 2
        else:
            units.append(seg)
            i += 1

    bodies: list[str] = []
    current = ""
    current_tokens = 0
    for unit in units:
        unit_tokens = counter(unit)
        if current and current_tokens + unit_tokens > budget:
            bodies.append(current)
            current, current_tokens = unit, unit_tokens
        else:
            current += unit
            current_tokens += unit_tokens
    if current.strip():
        bodies.append(current)

    prefix = id_prefix if id_prefix is not None else doc.id
    passages = []
    for ordinal, body in enumerate(bodies):
        body = body.strip()
        passages.append(
            Passage(
                id=f"{prefix}:{ordinal:04d}",
                doc_id=doc.id,
                ordinal=ordinal,
                context_line=context_line,
                body=body,
                token_count=counter(context_line) + counter(body),
                date=doc.date,
                ticker=doc.ticker,
                doc_type=doc.doc_type,
                event=doc.event,
                filename=doc.filename,
            )
        )
    return passages


def build_passages(
    documents: Iterable[Document],
    max_tokens: int = 512,
    rules: Sequence[BoilerplateRule] = DEFAULT_RULES,
    separators: Sequence[str] = DEFAULT_SEPARATORS,
) -> list[Passage]:
    """Full corpus pipeline: strip boilerplate, split, collect passages."""
    out: list[Passage] = []
    for doc in documents:
        cleaned = strip_boilerplate(doc.body, rules)
        if not cleaned.strip():
            logger.info("document %s empty after boilerplate stripping", doc.id)
            continue
        stripped_doc = Document(
            id=doc.id,
            doc_type=doc.doc_type,
            date=doc.date,
            filename=doc.filename,
            body=cleaned,
            company_name=doc.company_name,
            ticker=doc.ticker,
            event=doc.event,
        )
        out.extend(split_passages(stripped_doc, max_tokens=max_tokens, separators=separators))
    return out
