"""Trainable mean-pooled text encoder with contrastive (InfoNCE) finetuning.

The model is deliberately small: a hashed-vocabulary embedding table, mean
pooling over token rows, a linear projection, and L2 normalization. Gradients
are computed analytically (no autograd), which keeps training deterministic
and testable against finite differences.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

QUERY_PREFIX = "query: "
PASSAGE_PREFIX = "passage: "

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class CheckpointError(Exception):
    """Raised when a checkpoint file fails validation on load."""


def split_words(text: str) -> list[str]:
    """Lowercase word split on non-alphanumeric boundaries (digit runs kept)."""
    return [m.group().lower() for m in _TOKEN_RE.finditer(text)]


def split_words_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Like split_words but with (word, char_start, char_end) per token."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def hash_bucket(word: str, vocab_size: int, hash_seed: int = 0) -> int:
    """Map a word to a vocabulary bucket with a stable keyed hash."""
    key = hash_seed.to_bytes(8, "little", signed=False)
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") % vocab_size


@dataclass
class EncoderModel:
    """Embedding table + projection. Two models can be weight-averaged iff
    (vocab_size, dim, hash_seed) match."""

    vocab_size: int
    dim: int
    embedding: np.ndarray  # (vocab_size, dim)
    projection: np.ndarray  # (dim, dim)
    version: str = "init"
    hash_seed: int = 0
    _bucket_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.embedding = np.ascontiguousarray(self.embedding, dtype=np.float64)
        self.projection = np.ascontiguousarray(self.projection, dtype=np.float64)
        if self.embedding.shape != (self.vocab_size, self.dim):
            raise ValueError(
                f"embedding shape {self.embedding.shape} != ({self.vocab_size}, {self.dim})"
            )
        if self.projection.shape != (self.dim, self.dim):
            raise ValueError(
                f"projection shape {self.projection.shape} != ({self.dim}, {self.dim})"
            )
        if not (np.isfinite(self.embedding).all() and np.isfinite(self.projection).all()):
            raise ValueError("model parameters must be finite")

    def copy(self, version: str | None = None) -> "EncoderModel":
        return EncoderModel(
            vocab_size=self.vocab_size,
            dim=self.dim,
            embedding=self.embedding.copy(),
            projection=self.projection.copy(),
            version=self.version if version is None else version,
            hash_seed=self.hash_seed,
        )


def create_model(
    vocab_size: int = 32768,
    dim: int = 64,
    rng_seed: int = 0,
    hash_seed: int = 0,
    version: str = "init",
) -> EncoderModel:
    """Random-init model; embedding rows and projection ~ N(0, 1/dim)."""
    rng = np.random.default_rng(rng_seed)
    scale = 1.0 / math.sqrt(dim)
    return EncoderModel(
        vocab_size=vocab_size,
        dim=dim,
        embedding=rng.normal(0.0, scale, size=(vocab_size, dim)),
        projection=rng.normal(0.0, scale, size=(dim, dim)),
        version=version,
        hash_seed=hash_seed,
    )


def tokenize(model: EncoderModel, text: str) -> list[int]:
    """Text -> hashed token ids. Empty list for text with no word characters."""
    cache = model._bucket_cache
    ids = []
    for word in split_words(text):
        bucket = cache.get(word)
        if bucket is None:
            bucket = hash_bucket(word, model.vocab_size, model.hash_seed)
            cache[word] = bucket
        ids.append(bucket)
    return ids


def prefix_token_count(role: str) -> int:
    """Number of tokens contributed by the role prefix."""
    return len(split_words(_role_prefix(role)))


def _role_prefix(role: str) -> str:
    if role == "query":
        return QUERY_PREFIX
    if role == "passage":
        return PASSAGE_PREFIX
    raise ValueError(f"unknown role: {role!r}")


def text_token_ids(model: EncoderModel, text: str, role: str) -> list[int]:
    """Token ids of the role-prefixed text. Never empty (prefix has a token)."""
    return tokenize(model, _role_prefix(role) + text)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _ForwardCache:
    token_lists: list
    counts: np.ndarray  # (n,)
    pooled: np.ndarray  # (n, d) mean of embedding rows
    projected: np.ndarray  # (n, d) pooled @ W
    norms: np.ndarray  # (n,)
    embeddings: np.ndarray  # (n, d) unit rows


def _forward(model: EncoderModel, token_lists: Sequence[Sequence[int]]) -> _ForwardCache:
    counts = np.array([len(t) for t in token_lists], dtype=np.int64)
    if (counts == 0).any():
        raise ValueError("cannot encode an empty token sequence")
    flat = np.fromiter(
        (t for toks in token_lists for t in toks), dtype=np.int64, count=int(counts.sum())
    )
    rows = model.embedding[flat]
    starts = np.zeros(len(token_lists), dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    pooled = np.add.reduceat(rows, starts, axis=0) / counts[:, None]
    projected = pooled @ model.projection
    norms = np.linalg.norm(projected, axis=1)
    if (norms == 0.0).any():
        raise ValueError("zero-norm projection; model is degenerate for this input")
    embeddings = projected / norms[:, None]
    return _ForwardCache(list(token_lists), counts, pooled, projected, norms, embeddings)


def _backward(
    model: EncoderModel,
    cache: _ForwardCache,
    grad_out: np.ndarray,
    grad_embedding: np.ndarray,
    grad_projection: np.ndarray,
) -> None:
    """Accumulate dLoss/dE and dLoss/dW given dLoss/d(unit embeddings)."""
    dots = np.sum(grad_out * cache.embeddings, axis=1, keepdims=True)
    grad_proj_out = (grad_out - dots * cache.embeddings) / cache.norms[:, None]
    grad_projection += cache.pooled.T @ grad_proj_out
    grad_pooled = grad_proj_out @ model.projection.T
    per_token = grad_pooled / cache.counts[:, None]
    flat = np.fromiter(
        (t for toks in cache.token_lists for t in toks),
        dtype=np.int64,
        count=int(cache.counts.sum()),
    )
    np.add.at(grad_embedding, flat, np.repeat(per_token, cache.counts, axis=0))


def encode(model: EncoderModel, text: str, role: str) -> np.ndarray:
    """Unit-norm embedding of the role-prefixed text (mean pool -> project)."""
    return _forward(model, [text_token_ids(model, text, role)]).embeddings[0]


def encode_batch(model: EncoderModel, texts: Sequence[str], role: str) -> np.ndarray:
    """Stacked unit-norm embeddings, one row per text."""
    if not texts:
        return np.zeros((0, model.dim))
    return _forward(model, [text_token_ids(model, t, role) for t in texts]).embeddings


def encode_span(
    model: EncoderModel, text: str, token_range: tuple[int, int], role: str = "passage"
) -> np.ndarray:
    """Embedding of a contiguous token sub-span of the prefixed text.

    The range indexes into text_token_ids(model, text, role); the full range
    reproduces encode(). Used for sentence-level highlighting.
    """
    ids = text_token_ids(model, text, role)
    start, end = token_range
    if not (0 <= start < end <= len(ids)):
        raise IndexError(f"token range {token_range} invalid for {len(ids)} tokens")
    return _forward(model, [ids[start:end]]).embeddings[0]


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors (plain dot product)."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


# ---------------------------------------------------------------------------
# InfoNCE loss
# ---------------------------------------------------------------------------

def _infonce_from_tokens(
    model: EncoderModel,
    query_tokens: Sequence[Sequence[int]],
    candidate_tokens: Sequence[Sequence[int]],
    temperature: float,
    compute_grads: bool = True,
):
    """InfoNCE where query i's positive sits at candidate index i; remaining
    candidates (other positives + every mined hard negative in the batch) are
    negatives for all queries."""
    n_queries = len(query_tokens)
    q_cache = _forward(model, query_tokens)
    c_cache = _forward(model, candidate_tokens)
    logits = (q_cache.embeddings @ c_cache.embeddings.T) / temperature
    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    loss = float(-log_probs[np.arange(n_queries), np.arange(n_queries)].mean())

    if not compute_grads:
        return loss, None, None

    grad_logits = exp / denom
    grad_logits[np.arange(n_queries), np.arange(n_queries)] -= 1.0
    grad_logits /= n_queries
    grad_q = (grad_logits @ c_cache.embeddings) / temperature
    grad_c = (grad_logits.T @ q_cache.embeddings) / temperature

    grad_embedding = np.zeros_like(model.embedding)
    grad_projection = np.zeros_like(model.projection)
    _backward(model, q_cache, grad_q, grad_embedding, grad_projection)
    _backward(model, c_cache, grad_c, grad_embedding, grad_projection)
    return loss, grad_embedding, grad_projection


def infonce_loss(
    model: EncoderModel,
    batch: Sequence[tuple[str, str, Sequence[str]]],
    temperature: float = 0.05,
    compute_grads: bool = True,
):
    """Contrastive loss over (query, positive, hard_negatives) text triples.

    Returns (loss, grad_embedding, grad_projection); gradients are None when
    compute_grads is False.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not batch:
        raise ValueError("empty batch")
    query_tokens = [text_token_ids(model, q, "query") for q, _, _ in batch]
    candidate_tokens = [text_token_ids(model, p, "passage") for _, p, _ in batch]
    for _, _, negatives in batch:
        candidate_tokens.extend(text_token_ids(model, n, "passage") for n in negatives)
    return _infonce_from_tokens(model, query_tokens, candidate_tokens, temperature, compute_grads)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 3
    learning_rate: float = 0.2
    temperature: float = 0.05
    hard_negatives_per_query: int = 3
    rng_seed: int = 0
    momentum: float = 0.0
    # Epoch fractions at which checkpoints are emitted; None = six evenly
    # spaced points over the last half epoch (2.5..3.0 for 3 epochs).
    checkpoint_epochs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.hard_negatives_per_query == 0 and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when training without hard negatives")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def resolved_checkpoint_epochs(self) -> tuple[float, ...]:
        if self.checkpoint_epochs is not None:
            return tuple(self.checkpoint_epochs)
        lo = self.epochs - 0.5
        return tuple(lo + 0.1 * i for i in range(6))


@dataclass
class TrainResult:
    checkpoints: list[EncoderModel]
    losses: list[float]  # one entry per optimizer step


def train(
    model: EncoderModel,
    pairs: Sequence,
    passages: Mapping[str, str],
    config: TrainConfig,
) -> TrainResult:
    """Minibatch SGD over (query, positive, hard negatives) pairs.

    `pairs` need .query, .positive_passage_id and .hard_negative_ids;
    `passages` maps passage id -> the exact text to embed. The model is
    updated in place; checkpoints are snapshots at the configured epoch
    fractions.
    """
    if not pairs:
        raise ValueError("empty training set")
    missing = [p.positive_passage_id for p in pairs if p.positive_passage_id not in passages]
    if missing:
        raise KeyError(f"passages missing from store: {missing[:5]}")

    n_hard = config.hard_negatives_per_query
    query_tokens = [text_token_ids(model, p.query, "query") for p in pairs]
    passage_token_cache: dict[str, list[int]] = {}

    def passage_tokens(pid: str) -> list[int]:
        toks = passage_token_cache.get(pid)
        if toks is None:
            toks = text_token_ids(model, passages[pid], "passage")
            passage_token_cache[pid] = toks
        return toks

    steps_per_epoch = math.ceil(len(pairs) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    fractions = config.resolved_checkpoint_epochs()
    for f in fractions:
        if not 0 < f <= config.epochs:
            raise ValueError(f"checkpoint epoch {f} outside (0, {config.epochs}]")
    targets: dict[int, list[float]] = {}
    for f in fractions:
        step = min(total_steps, max(1, int(round(f * steps_per_epoch))))
        targets.setdefault(step, []).append(f)

    rng = np.random.default_rng(config.rng_seed)
    vel_e = np.zeros_like(model.embedding) if config.momentum > 0 else None
    vel_w = np.zeros_like(model.projection) if config.momentum > 0 else None

    checkpoints: list[EncoderModel] = []
    losses: list[float] = []
    global_step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            q_tokens = [query_tokens[i] for i in batch_idx]
            cand_tokens = [passage_tokens(pairs[i].positive_passage_id) for i in batch_idx]
            if n_hard > 0:
                for i in batch_idx:
                    for neg_id in pairs[i].hard_negative_ids[:n_hard]:
                        cand_tokens.append(passage_tokens(neg_id))
            if len(cand_tokens) < 2:
                logger.debug("skipping degenerate batch with a single candidate")
                global_step += 1
                continue
            loss, grad_e, grad_w = _infonce_from_tokens(
                model, q_tokens, cand_tokens, config.temperature
            )
            if not math.isfinite(loss):
                bad_ids = [pairs[i].positive_passage_id for i in batch_idx]
                raise RuntimeError(
                    f"non-finite loss at step {global_step} (epoch {epoch}); batch ids {bad_ids[:8]}"
                )
            if vel_e is not None:
                vel_e *= config.momentum
                vel_e += grad_e
                vel_w *= config.momentum
                vel_w += grad_w
                model.embedding -= config.learning_rate * vel_e
                model.projection -= config.learning_rate * vel_w
            else:
                model.embedding -= config.learning_rate * grad_e
                model.projection -= config.learning_rate * grad_w
            losses.append(loss)
            global_step += 1
            logger.debug("step %d loss %.6f", global_step, loss)
            for f in targets.get(global_step, ()):
                checkpoints.append(model.copy(version=f"epoch{f:g}"))
    return TrainResult(checkpoints=checkpoints, losses=losses)


# ---------------------------------------------------------------------------
# Weight averaging
# ---------------------------------------------------------------------------

def average_weights(
    base: EncoderModel,
    checkpoints: Sequence[EncoderModel],
    base_weight: float,
    each_weight: float,
) -> EncoderModel:
    """Convex parameter average of the base model and finetuned checkpoints."""
    total = base_weight + len(checkpoints) * each_weight
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {total}")
    for ck in checkpoints:
        if (ck.vocab_size, ck.dim, ck.hash_seed) != (base.vocab_size, base.dim, base.hash_seed):
            raise ValueError(
                "models are not average-compatible: "
                f"({ck.vocab_size}, {ck.dim}, hash_seed={ck.hash_seed}) vs "
                f"({base.vocab_size}, {base.dim}, hash_seed={base.hash_seed})"
            )
    # Accumulate differences from the base so that averaging identical models
    # reproduces the base parameters exactly, whatever the weights.
    emb = base.embedding.copy()
    proj = base.projection.copy()
    for ck in checkpoints:
        emb += each_weight * (ck.embedding - base.embedding)
        proj += each_weight * (ck.projection - base.projection)
    return EncoderModel(
        vocab_size=base.vocab_size,
        dim=base.dim,
        embedding=emb,
        projection=proj,
        version=f"soup[{base.version}+{len(checkpoints)}ckpt]",
        hash_seed=base.hash_seed,
    )


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "finsearch-encoder-v1"


def save_checkpoint(model: EncoderModel, path: str | Path) -> None:
    """Write a self-describing binary checkpoint (JSON header + raw arrays)."""
    payload = model.embedding.tobytes() + model.projection.tobytes()
    header = {
        "format": _CHECKPOINT_FORMAT,
        "vocab_size": model.vocab_size,
        "dim": model.dim,
        "version": model.version,
        "hash_seed": model.hash_seed,
        "dtype": "float64",
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        f.write(payload)


def load_checkpoint(path: str | Path, expected_dim: int | None = None) -> EncoderModel:
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header in {path}") from exc
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format: {header.get('format')!r}")
    vocab_size, dim = header["vocab_size"], header["dim"]
    if expected_dim is not None and dim != expected_dim:
        raise CheckpointError(f"dimension mismatch: checkpoint dim {dim}, expected {expected_dim}")
    expected_bytes = (vocab_size * dim + dim * dim) * 8
    if len(payload) != expected_bytes:
        raise CheckpointError(
            f"truncated checkpoint: {len(payload)} payload bytes, expected {expected_bytes}"
        )
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise CheckpointError("checksum mismatch; checkpoint is corrupt")
    split = vocab_size * dim * 8
    embedding = np.frombuffer(payload[:split], dtype=np.float64).reshape(vocab_size, dim)
    projection = np.frombuffer(payload[split:], dtype=np.float64).reshape(dim, dim)
    return EncoderModel(
        vocab_size=vocab_size,
        dim=dim,
        embedding=embedding.copy(),
        projection=projection.copy(),
        version=header["version"],
        hash_seed=header["hash_seed"],
    )
