"""Vocabulary, probability distributions, seeded randomness, and the model interface.

Distributions are dense 1-D float64 numpy arrays over a fixed vocabulary.
All models implement :class:`LanguageModel`; simple per-position conditional
models subclass :class:`ContextConditionedModel` instead.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np

SUM_TOL = 1e-9

BOS_PIECE = "<bos>"
EOS_PIECE = "<eos>"
UNK_PIECE = "<unk>"


class DegenerateDistribution(ValueError):
    """An operation would produce an all-zero probability vector."""


class ContractViolation(ValueError):
    """An argument violated an operation's precondition."""


class TrainingError(ValueError):
    """Model training received unusable input."""


class ConstructionError(ValueError):
    """Requested object cannot be constructed from the given parameters."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class Vocab:
    """Immutable token vocabulary: piece strings indexed by contiguous ids."""

    def __init__(self, pieces: Sequence[str]):
        pieces = tuple(pieces)
        if len(pieces) < 2:
            raise ConstructionError("vocabulary needs at least 2 pieces")
        if len(set(pieces)) != len(pieces):
            raise ConstructionError("duplicate pieces in vocabulary")
        self.pieces = pieces
        self._index = {p: i for i, p in enumerate(pieces)}

    @property
    def size(self) -> int:
        return len(self.pieces)

    def piece_of(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise ContractViolation(f"token id {token_id} out of range [0, {self.size})")
        return self.pieces[token_id]

    def id_of(self, piece: str) -> Optional[int]:
        return self._index.get(piece)

    @property
    def bos_id(self) -> Optional[int]:
        return self._index.get(BOS_PIECE)

    @property
    def eos_id(self) -> Optional[int]:
        return self._index.get(EOS_PIECE)

    @property
    def unk_id(self) -> Optional[int]:
        return self._index.get(UNK_PIECE)

    @classmethod
    def byte_level(cls) -> "Vocab":
        """Vocabulary of the 256 byte values plus bos/eos/unk specials."""
        specials = (BOS_PIECE, EOS_PIECE, UNK_PIECE)
        return cls(specials + tuple(chr(b) for b in range(256)))

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "Vocab":
        specials = (BOS_PIECE, EOS_PIECE, UNK_PIECE)
        seen = []
        for w in words:
            if w not in seen and w not in specials:
                seen.append(w)
        return cls(specials + tuple(sorted(seen)))

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.pieces == other.pieces

    def __hash__(self):
        return hash(self.pieces)

    def __repr__(self):
        return f"Vocab(size={self.size})"


def check_token_seq(tokens: Sequence[int], vocab_size: int) -> None:
    for t in tokens:
        if not 0 <= t < vocab_size:
            raise ContractViolation(f"token {t} outside vocabulary of size {vocab_size}")


def normalize(weights) -> np.ndarray:
    """Scale a non-negative weight vector to sum to 1."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise ContractViolation("weights must be a non-empty 1-D vector")
    if np.any(w < 0):
        raise ContractViolation("weights must be non-negative")
    total = float(w.sum())
    if total <= 0.0:
        raise DegenerateDistribution("all-zero weight vector")
    return w / total


def residual(p_target: np.ndarray, p_draft: np.ndarray) -> np.ndarray:
    """normalize(max(0, p_target - p_draft)) elementwise.

    Raises DegenerateDistribution when the clipped difference has no mass
    (p_target == p_draft); callers fall back to sampling p_target directly.
    """
    p = np.asarray(p_target, dtype=np.float64)
    q = np.asarray(p_draft, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractViolation("distributions live on different vocabularies")
    diff = np.maximum(p - q, 0.0)
    total = float(diff.sum())
    if total <= 0.0:
        raise DegenerateDistribution("zero residual: target equals draft")
    return diff / total


class RandomSource:
    """Deterministic uniform stream; identical seed, identical stream."""

    def __init__(self, seed: int, _seq: Optional[np.random.SeedSequence] = None):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(_seq if _seq is not None else self.seed))

    def uniform(self) -> float:
        """Next uniform draw on [0, 1)."""
        return float(self._gen.random())

    def uniforms(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def split(self, n: int) -> list:
        """n independent child streams derived from the master seed.

        Children are produced by SeedSequence.spawn on the master seed, so the
        split is deterministic and order-stable.
        """
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [RandomSource(self.seed, _seq=c) for c in children]


def sample(dist: np.ndarray, rng: RandomSource) -> int:
    """Inverse-CDF sample over ascending token-id order."""
    u = rng.uniform()
    cdf = np.cumsum(dist)
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, len(dist) - 1)


def greedy_token(dist: np.ndarray) -> int:
    """Argmax with ties broken by lowest token id."""
    return int(np.argmax(dist))


class LanguageModel(ABC):
    """Parallel next-token scorer over a fixed vocabulary.

    Implementations are immutable after construction and safe to share
    across concurrent readers.  `evaluate` must be pure.
    """

    def __init__(self, vocab: Vocab, cost_weight: float, descriptor: str):
        if cost_weight < 0:
            raise ConstructionError("cost_weight must be non-negative")
        self.vocab = vocab
        self.cost_weight = float(cost_weight)
        self.descriptor = descriptor

    #: whether repeated identical queries are guaranteed identical answers
    deterministic: bool = True

    @abstractmethod
    def evaluate(self, tokens: Sequence[int], start: int) -> list:
        """One normalized distribution per position p in [start, len(tokens)+1].

        The distribution at position p conditions on tokens[:p-1] (positions
        are 1-based); the final entry scores the next token after the full
        sequence.
        """

    def _check_start(self, tokens: Sequence[int], start: int) -> None:
        if not 1 <= start <= len(tokens) + 1:
            raise ContractViolation(
                f"start={start} out of bounds for sequence of length {len(tokens)}"
            )

    def propose(self, tokens: Sequence[int], budget: int, rng: RandomSource,
                greedy: bool):
        """Autoregressively extend `tokens` by `budget` tokens.

        Returns (new_tokens, probs, dists, n_calls).  Overridden by drafters
        that emit a whole span per invocation.
        """
        cur = list(tokens)
        out, probs, dists = [], [], []
        calls = 0
        for _ in range(budget):
            d = self.evaluate(cur, len(cur) + 1)[0]
            calls += 1
            tok = greedy_token(d) if greedy else sample(d, rng)
            out.append(tok)
            probs.append(float(d[tok]))
            dists.append(d)
            cur.append(tok)
        return out, probs, dists, calls


class ContextConditionedModel(LanguageModel):
    """Base for models defined by a per-position conditional distribution."""

    @abstractmethod
    def distribution(self, context: Sequence[int]) -> np.ndarray:
        """Normalized next-token distribution given the preceding tokens."""

    def evaluate(self, tokens: Sequence[int], start: int) -> list:
        self._check_start(tokens, start)
        tokens = list(tokens)
        return [self.distribution(tokens[: p - 1]) for p in range(start, len(tokens) + 2)]
