"""JSONL readers/writers for the pipeline's file formats."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from .corpus import Document, Passage, ingest, passage_from_dict
from .querygen import FewShotExample, GenerationOutcome, QueryPair, pair_from_dict


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def load_documents(path: str | Path) -> list[Document]:
    seen: set[str] = set()
    return [ingest(rec, seen) for rec in read_jsonl(path)]


def load_passages(path: str | Path) -> list[Passage]:
    return [passage_from_dict(rec) for rec in read_jsonl(path)]


def load_pairs(path: str | Path) -> list[QueryPair]:
    return [pair_from_dict(rec) for rec in read_jsonl(path)]


def load_pool(path: str | Path) -> list[FewShotExample]:
    return [FewShotExample(rec["passage_text"], rec["query"]) for rec in read_jsonl(path)]


def save_documents(path: str | Path, documents: Iterable[Document]) -> int:
    return write_jsonl(path, (d.to_dict() for d in documents))


def save_passages(path: str | Path, passages: Iterable[Passage]) -> int:
    return write_jsonl(path, (p.to_dict() for p in passages))


def save_pairs(path: str | Path, pairs: Iterable[QueryPair]) -> int:
    return write_jsonl(path, (p.to_dict() for p in pairs))


def save_outcomes(path: str | Path, outcomes: Iterable[GenerationOutcome]) -> int:
    return write_jsonl(path, (o.to_dict() for o in outcomes))


def save_pool(path: str | Path, pool: Iterable[FewShotExample]) -> int:
    return write_jsonl(path, ({"passage_text": e.passage_text, "query": e.query} for e in pool))
