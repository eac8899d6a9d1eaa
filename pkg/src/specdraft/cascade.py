"""Recursive cascade drafting: vertical cascade via recursion, horizontal
cascade via the per-level stage loop, plus outer generation loops and full
per-run trace accounting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .core import ConfigError, ContractViolation, LanguageModel, RandomSource
from .kernel import DecodeMode, DraftBatch, ReviewOutcome, sd_step, speculative_review


class KMatrix:
    """Upper-triangular per-level stage budgets.

    Row i holds the horizontal-stage budgets for the level whose reviewer is
    the i-th model from the top; entries below the diagonal are padding and
    ignored.  Constructed from a full square list-of-lists, e.g.
    [[2, 10], [0, 10]].
    """

    def __init__(self, rows: Sequence[Sequence[int]]):
        n = len(rows)
        trimmed = []
        for i, row in enumerate(rows):
            if len(row) != n:
                raise ContractViolation(f"row {i} has {len(row)} entries, expected {n}")
            used = [int(v) for v in row[i:]]
            if any(v < 1 for v in used):
                raise ContractViolation(f"row {i} has a non-positive stage budget")
            trimmed.append(tuple(used))
        self._rows = trimmed
        self.n = n

    @classmethod
    def _from_trimmed(cls, rows) -> "KMatrix":
        m = cls.__new__(cls)
        m._rows = list(rows)
        m.n = len(rows)
        return m

    def top_row(self) -> Tuple[int, ...]:
        return self._rows[0]

    def submatrix(self, drop: int) -> "KMatrix":
        """Matrix for the cascade that drops the first `drop` levels."""
        return KMatrix._from_trimmed(self._rows[drop:])

    def to_square(self) -> List[List[int]]:
        return [[0] * i + list(row) for i, row in enumerate(self._rows)]

    def __eq__(self, other):
        return isinstance(other, KMatrix) and self._rows == other._rows

    def __repr__(self):
        return f"KMatrix({self.to_square()})"


@dataclass
class StageRecord:
    """One review event: how much was proposed and what survived."""

    level: int
    stage: int
    model: str
    proposed: int
    accepted: int
    positional_accept: Tuple[int, ...]


class GenerationTrace:
    """Per-run accounting: reviews, per-model invocation counts, and cost."""

    def __init__(self, target_descriptor: str = ""):
        self.steps: List[StageRecord] = []
        self.calls_per_model: Dict[str, int] = {}
        self.cost_weights: Dict[str, float] = {}
        self.tokens_emitted = 0
        self.target_descriptor = target_descriptor
        self.warnings: List[str] = []
        self._stage_counters: Dict[int, int] = {}

    def record_call(self, model: LanguageModel, n: int = 1) -> None:
        self.calls_per_model[model.descriptor] = self.calls_per_model.get(model.descriptor, 0) + n
        self.cost_weights[model.descriptor] = model.cost_weight

    def add_review(self, level: int, model: LanguageModel, proposed: int,
                   accepted: int) -> None:
        stage = self._stage_counters.get(level, 0)
        self._stage_counters[level] = stage + 1
        bits = tuple(1 if i < accepted else 0 for i in range(proposed))
        self.steps.append(StageRecord(level, stage, model.descriptor, proposed,
                                      accepted, bits))

    @property
    def cost_units(self) -> float:
        return sum(n * self.cost_weights[m] for m, n in self.calls_per_model.items())


@dataclass
class CascadeConfig:
    """Everything one cascade generation run needs."""

    target: LanguageModel
    drafts: List[LanguageModel]
    k_matrix: KMatrix
    mode: DecodeMode
    max_new_tokens: int
    seed: int
    lenience: float = 1.0
    stop_tokens: frozenset = frozenset()
    allow_inexact_sampling: bool = False

    def validate(self) -> None:
        if self.lenience < 1.0:
            raise ConfigError(f"lenience must be >= 1, got {self.lenience}")
        if self.drafts and self.k_matrix.n != len(self.drafts):
            raise ConfigError(
                f"k-matrix has {self.k_matrix.n} levels for {len(self.drafts)} drafts"
            )
        if (self.mode is DecodeMode.SAMPLING and self.lenience > 1.0
                and not self.allow_inexact_sampling):
            raise ConfigError(
                "internal lenience > 1 breaks sampling exactness; "
                "set allow_inexact_sampling=True to override"
            )


def csd_step(
    reviewer: LanguageModel,
    drafts: Sequence[LanguageModel],
    prefix: Sequence[int],
    k_matrix: KMatrix,
    lenience: float,
    is_outermost: bool,
    mode: DecodeMode,
    rng: RandomSource,
    trace: GenerationTrace,
    level: int = 0,
    budget: int = 1,
):
    """One recursive cascade step.

    Returns (new_tokens, probs, dists): tokens beyond `prefix` (accepted
    drafts plus one correction or bonus token), the reviewer's scalar
    probability of each, and the reviewer's full distribution at each
    position, which the caller's own review consumes as its proposal batch.

    Base case (no drafts left): the model proposes directly; a span drafter
    emits its whole span in one call, anything else generates `budget`
    tokens autoregressively.
    """
    if not prefix:
        raise ContractViolation("prefix must be non-empty")
    greedy = mode is DecodeMode.GREEDY
    if not drafts:
        tokens, probs, dists, calls = reviewer.propose(prefix, budget, rng, greedy)
        trace.record_call(reviewer, calls)
        return tokens, probs, dists

    if k_matrix.n != len(drafts):
        raise ContractViolation(
            f"k-matrix level count {k_matrix.n} != number of drafts {len(drafts)}"
        )
    cur = list(prefix)
    probs: List[float] = []
    dists: List = []
    for i, k_i in enumerate(k_matrix.top_row()):
        stage_drafts = drafts[i + 1:]
        sub_k = k_matrix.submatrix(i + 1)
        taken = 0
        while taken < k_i:
            t2, p2, d2 = csd_step(drafts[i], stage_drafts, cur, sub_k, lenience,
                                  False, mode, rng, trace, level + 1,
                                  budget=k_i - taken)
            cur.extend(t2)
            probs.extend(p2)
            dists.extend(d2)
            taken += len(t2)

    n_draft = len(cur) - len(prefix)
    reviewer_dists = reviewer.evaluate(cur, len(prefix) + 1)
    trace.record_call(reviewer)
    l = 1.0 if is_outermost else lenience
    batch = DraftBatch(cur[len(prefix):], probs, dists)
    outcome = speculative_review(reviewer_dists, batch, l, mode, rng,
                                 argmax_only=is_outermost and greedy)
    trace.add_review(level, reviewer, n_draft, outcome.accepted_count)
    return (outcome.emitted, outcome.emitted_probs,
            reviewer_dists[:outcome.accepted_count + 1])


def _check_determinism(trace: GenerationTrace, models: Sequence[LanguageModel],
                       mode: DecodeMode) -> None:
    if mode is not DecodeMode.GREEDY:
        return
    for m in models:
        if not getattr(m, "deterministic", True):
            trace.warnings.append(
                f"model {m.descriptor!r} reports non-deterministic scoring; "
                "greedy equivalence is not guaranteed"
            )


def _autoregressive_into(model: LanguageModel, prompt: Sequence[int],
                         max_new_tokens: int, mode: DecodeMode,
                         rng: RandomSource, stop_tokens,
                         trace: GenerationTrace):
    from .core import greedy_token, sample  # local to avoid polluting module API

    cur = list(prompt)
    for _ in range(max_new_tokens):
        d = model.evaluate(cur, len(cur) + 1)[0]
        trace.record_call(model)
        tok = greedy_token(d) if mode is DecodeMode.GREEDY else sample(d, rng)
        cur.append(tok)
        trace.tokens_emitted += 1
        if tok in stop_tokens:
            break
    return cur, trace


def autoregressive_generate(model: LanguageModel, prompt: Sequence[int],
                            max_new_tokens: int,
                            mode: DecodeMode = DecodeMode.GREEDY,
                            rng: Optional[RandomSource] = None,
                            stop_tokens=frozenset()):
    """Plain one-token-at-a-time generation; the baseline every comparison
    is anchored to.  One model call per emitted token."""
    if not prompt:
        raise ContractViolation("prompt must be non-empty")
    trace = GenerationTrace(model.descriptor)
    _check_determinism(trace, [model], mode)
    if rng is None:
        rng = RandomSource(0)
    return _autoregressive_into(model, prompt, max_new_tokens, mode, rng,
                                stop_tokens, trace)


def generate(config: CascadeConfig, prompt: Sequence[int]):
    """Full cascade generation: outermost reviews until the budget or a stop
    token; output truncated at the first stop token."""
    config.validate()
    if not prompt:
        raise ContractViolation("prompt must be non-empty")
    rng = RandomSource(config.seed)
    trace = GenerationTrace(config.target.descriptor)
    _check_determinism(trace, [config.target] + list(config.drafts), config.mode)
    if config.max_new_tokens <= 0:
        return list(prompt), trace
    if not config.drafts:
        return _autoregressive_into(config.target, prompt, config.max_new_tokens,
                                    config.mode, rng, config.stop_tokens, trace)
    cur = list(prompt)
    emitted = 0
    while True:
        new, _, _ = csd_step(config.target, config.drafts, cur, config.k_matrix,
                             config.lenience, True, config.mode, rng, trace)
        for tok in new:
            cur.append(tok)
            emitted += 1
            trace.tokens_emitted += 1
            if tok in config.stop_tokens or emitted >= config.max_new_tokens:
                return cur, trace


def sd_generate(target: LanguageModel, draft: LanguageModel, k: int,
                lenience: float, prompt: Sequence[int], max_new_tokens: int,
                mode: DecodeMode, rng: Optional[RandomSource] = None,
                stop_tokens=frozenset()):
    """Outer loop over vanilla speculative-decoding steps."""
    if not prompt:
        raise ContractViolation("prompt must be non-empty")
    if rng is None:
        rng = RandomSource(0)
    trace = GenerationTrace(target.descriptor)
    _check_determinism(trace, [target, draft], mode)
    cur = list(prompt)
    emitted = 0
    while emitted < max_new_tokens:
        outcome = sd_step(target, draft, k, lenience, cur, mode, rng, trace)
        for tok in outcome.emitted:
            cur.append(tok)
            emitted += 1
            trace.tokens_emitted += 1
            if tok in stop_tokens or emitted >= max_new_tokens:
                return cur, trace
    return cur, trace
