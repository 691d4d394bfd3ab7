"""Hard negative mining: rank the corpus per query with a preliminary model
and take the passages a fixed offset below the positive."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import encoder
from .querygen import QueryPair

logger = logging.getLogger(__name__)


class MiningDataError(KeyError):
    """Raised when the passage store is missing a pair's positive."""


@dataclass(frozen=True)
class MiningConfig:
    top_k: int = 1000
    rank_offset: int = 200
    negatives_per_query: int = 3

    def __post_init__(self):
        if self.rank_offset < 1:
            raise ValueError("rank_offset must be >= 1")
        if self.negatives_per_query < 0:
            raise ValueError("negatives_per_query must be >= 0")
        if self.top_k <= self.rank_offset:
            raise ValueError("top_k must exceed rank_offset")


def rank_passages(
    query_embedding: np.ndarray,
    passage_matrix: np.ndarray,
    passage_ids: Sequence[str],
) -> list[int]:
    """Indices of passages by similarity descending, ties by ascending id."""
    sims = passage_matrix @ query_embedding
    order = sorted(range(len(passage_ids)), key=lambda i: (-sims[i], passage_ids[i]))
    return order


def mine(
    model: encoder.EncoderModel,
    pairs: Sequence[QueryPair],
    passages: Mapping[str, str],
    cfg: MiningConfig = MiningConfig(),
) -> tuple[list[QueryPair], list[str]]:
    """Attach hard negatives to each pair; drop pairs whose positive is not
    retrieved within the top_k.

    passages maps passage id -> embed text. Negatives for a positive at rank r
    are the passages at ranks r+offset .. r+offset+n-1; when the corpus is
    shallower than that, the deepest available non-positive ranks fill in.
    Returns (mined pairs in input order, dropped query_ids).
    """
    for pair in pairs:
        if pair.positive_passage_id not in passages:
            raise MiningDataError(f"passage store missing positive: {pair.positive_passage_id}")

    passage_ids = sorted(passages.keys())
    id_to_index = {pid: i for i, pid in enumerate(passage_ids)}
    passage_matrix = encoder.encode_batch(model, [passages[p] for p in passage_ids], "passage")
    query_matrix = encoder.encode_batch(model, [p.query for p in pairs], "query")

    # Rank all passages per query in one shot: argsort on (-sim, id index);
    # passage_ids is sorted, so index order == ascending id order for ties.
    mined: list[QueryPair] = []
    dropped: list[str] = []
    n = len(passage_ids)
    for qi, pair in enumerate(pairs):
        sims = passage_matrix @ query_matrix[qi]
        order = np.lexsort((np.arange(n), -sims))
        positive_rank = int(np.nonzero(order == id_to_index[pair.positive_passage_id])[0][0])
        if positive_rank >= cfg.top_k:
            dropped.append(pair.query_id)
            continue
        wanted = [
            positive_rank + cfg.rank_offset + i
            for i in range(cfg.negatives_per_query)
            if positive_rank + cfg.rank_offset + i < n
        ]
        shortfall = cfg.negatives_per_query - len(wanted)
        if shortfall > 0:
            # Fill from the deepest ranks still below the positive, so a
            # negative never outranks the positive it is mined against.
            taken = set(wanted)
            for rank in range(n - 1, positive_rank, -1):
                if shortfall == 0:
                    break
                if rank in taken:
                    continue
                taken.add(rank)
                wanted.append(rank)
                shortfall -= 1
            wanted.sort()
        negative_ids = tuple(passage_ids[order[r]] for r in wanted)
        mined.append(replace(pair, hard_negative_ids=negative_ids))
    logger.info("mined %d pairs, dropped %d (positive outside top %d)",
                len(mined), len(dropped), cfg.top_k)
    return mined, dropped
