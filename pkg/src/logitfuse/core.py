"""Numerical kernel for decoding-time logit fusion.

Implements the pieces needed to steer a large model with small
fine-tuned/pretrained expert pairs at each decoding step: stable softmax,
KL divergence over a shared vocabulary, the logit-arithmetic fusion rule,
the KL-matching objectives it induces, and the grid search that picks
per-step fusion weights.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllMaskedError,
    ExpertCountMismatchError,
    GridTooLargeError,
    LengthMismatchError,
    VocabMismatchError,
)

KL_EPS = 1e-12
MAX_GRID_POINTS = 1024
MAX_JOINT_CANDIDATES = 10_000

MODE_SINGLE_EXPERT_PER_STEP = "single_expert_per_step"
MODE_JOINT_GRID = "joint_grid"
MODE_FIXED = "fixed"


@dataclass(frozen=True)
class VocabSpec:
    """Identity of a shared vocabulary: its size plus an optional fingerprint."""

    size: int
    fingerprint: str | None = None

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")

    def compatible_with(self, other: "VocabSpec") -> bool:
        if self.size != other.size:
            return False
        if self.fingerprint is not None and other.fingerprint is not None:
            return self.fingerprint == other.fingerprint
        return True


def _require_compatible(a: VocabSpec, b: VocabSpec) -> None:
    if not a.compatible_with(b):
        raise VocabMismatchError(f"incompatible vocabularies: {a} vs {b}")


class LogitVector:
    """Raw per-token scores over a vocabulary.

    Entries are finite log-scores or -inf for masked tokens; at least one
    entry must be finite.
    """

    __slots__ = ("values", "vocab")

    def __init__(self, values, vocab: VocabSpec | None = None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("logits must be a 1-d vector")
        if np.isnan(arr).any() or np.isposinf(arr).any():
            raise ValueError("logits must be finite or -inf")
        if not np.isfinite(arr).any():
            raise AllMaskedError("all logit entries are masked")
        if vocab is None:
            vocab = VocabSpec(size=len(arr))
        elif vocab.size != len(arr):
            raise LengthMismatchError(
                f"expected {vocab.size} logits, got {len(arr)}"
            )
        self.values = arr
        self.vocab = vocab

    def __len__(self) -> int:
        return len(self.values)


class ProbabilityDistribution:
    """Normalized next-token distribution over a vocabulary."""

    __slots__ = ("probs", "vocab")

    def __init__(self, probs, vocab: VocabSpec | None = None):
        arr = np.asarray(probs, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("probabilities must be a 1-d vector")
        if (arr < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if abs(arr.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {arr.sum()!r}, not 1")
        if vocab is None:
            vocab = VocabSpec(size=len(arr))
        elif vocab.size != len(arr):
            raise LengthMismatchError(
                f"expected {vocab.size} probabilities, got {len(arr)}"
            )
        self.probs = arr
        self.vocab = vocab

    def __len__(self) -> int:
        return len(self.probs)


@dataclass
class ExpertLogits:
    """One expert pair: the fine-tuned model's logits and its pretrained base's."""

    name: str
    fine_tuned: LogitVector
    base: LogitVector

    def __post_init__(self):
        _require_compatible(self.fine_tuned.vocab, self.base.vocab)


@dataclass
class StepLogits:
    """All logits gathered for one decoding step: the large model plus T expert pairs."""

    large: LogitVector
    experts: list[ExpertLogits]

    def __post_init__(self):
        if not self.experts:
            raise ValueError("at least one expert pair is required")
        names = [e.name for e in self.experts]
        if len(set(names)) != len(names):
            raise ValueError(f"expert names must be unique, got {names}")
        for e in self.experts:
            _require_compatible(self.large.vocab, e.fine_tuned.vocab)
            _require_compatible(self.large.vocab, e.base.vocab)

    @property
    def num_experts(self) -> int:
        return len(self.experts)


@dataclass(frozen=True)
class AlphaGrid:
    """Inclusive arithmetic grid of candidate fusion weights."""

    lower: float = 0.0
    upper: float = 2.0
    step: float = 0.1

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("grid lower bound exceeds upper bound")
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        n = self.num_points
        if not 1 <= n <= MAX_GRID_POINTS:
            raise ValueError(f"grid point count {n} outside [1, {MAX_GRID_POINTS}]")

    @property
    def num_points(self) -> int:
        return int(math.floor((self.upper - self.lower) / self.step + 1e-9)) + 1

    def values(self) -> np.ndarray:
        vals = self.lower + self.step * np.arange(self.num_points)
        # last point can overshoot the bound by float error
        return np.minimum(vals, self.upper)


@dataclass
class AlphaAssignment:
    """Result of a fusion-weight search: one weight per expert."""

    alphas: np.ndarray
    mode: str
    objective_value: float
    evaluations: int = 0

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.objective_value < 0:
            raise ValueError("objective value must be nonnegative")


@dataclass(frozen=True)
class KlPair:
    """Forward and reverse KL between a candidate and a reference distribution."""

    forward: float
    reverse: float

    def __post_init__(self):
        if self.forward < 0 or self.reverse < 0:
            raise ValueError("KL divergences must be nonnegative")


def softmax(logits: LogitVector) -> ProbabilityDistribution:
    """Stable softmax with max-subtraction; masked (-inf) entries map to 0."""
    v = logits.values
    m = np.max(v[np.isfinite(v)])
    with np.errstate(invalid="ignore"):
        e = np.exp(v - m)
    e[~np.isfinite(v)] = 0.0
    return ProbabilityDistribution(e / e.sum(), logits.vocab)


def kl_divergence(p: ProbabilityDistribution, q: ProbabilityDistribution) -> float:
    """KL(p || q) in nats over the full vocabulary.

    The denominator is floored at KL_EPS and zero-probability terms of p
    contribute nothing (0 * ln 0 = 0).
    """
    _require_compatible(p.vocab, q.vocab)
    pp, qq = p.probs, q.probs
    mask = pp > 0
    val = float(np.sum(pp[mask] * np.log(pp[mask] / np.maximum(qq[mask], KL_EPS))))
    return max(0.0, val)


def fuse_logits(step: StepLogits, alphas) -> LogitVector:
    """Fused logits: large + sum_t alpha_t * (fine_tuned_t - base_t).

    Masked positions of the large model, or of any expert vector with a
    nonzero weight, stay masked in the result. Experts with weight 0 do
    not participate at all.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (step.num_experts,):
        raise LengthMismatchError(
            f"expected {step.num_experts} weights, got shape {alphas.shape}"
        )
    if not np.any(alphas):
        return LogitVector(step.large.values.copy(), step.large.vocab)

    masked = ~np.isfinite(step.large.values)
    fused = np.where(masked, 0.0, step.large.values)
    for alpha, expert in zip(alphas, step.experts):
        if alpha == 0.0:
            continue
        ft, base = expert.fine_tuned.values, expert.base.values
        m = ~np.isfinite(ft) | ~np.isfinite(base)
        masked |= m
        fused = fused + alpha * np.where(m, 0.0, ft - base)
    fused[masked] = -np.inf
    return LogitVector(fused, step.large.vocab)


def behavioral_kls(expert: ExpertLogits) -> KlPair:
    """Forward/reverse KL between the expert's fine-tuned and base distributions."""
    q_ft = softmax(expert.fine_tuned)
    q = softmax(expert.base)
    return KlPair(forward=kl_divergence(q_ft, q), reverse=kl_divergence(q, q_ft))


def _objective(
    step: StepLogits,
    alphas,
    large_dist: ProbabilityDistribution,
    behavioral: list[KlPair],
) -> float:
    fused_dist = softmax(fuse_logits(step, alphas))
    f = kl_divergence(fused_dist, large_dist)
    r = kl_divergence(large_dist, fused_dist)
    total = 0.0
    for pair in behavioral:
        total += (f - pair.forward) ** 2 + (r - pair.reverse) ** 2
    return total


def single_objective(step: StepLogits, alpha: float) -> float:
    """Squared KL-matching residual for a single expert pair at weight alpha."""
    if step.num_experts != 1:
        raise ExpertCountMismatchError(
            f"single-expert objective needs exactly 1 expert, got {step.num_experts}"
        )
    return multi_objective(step, [alpha])


def multi_objective(step: StepLogits, alphas) -> float:
    """Sum over experts of squared KL-matching residuals for the fused distribution."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (step.num_experts,):
        raise LengthMismatchError(
            f"expected {step.num_experts} weights, got shape {alphas.shape}"
        )
    large_dist = softmax(step.large)
    behavioral = [behavioral_kls(e) for e in step.experts]
    return _objective(step, alphas, large_dist, behavioral)


def search_alpha(
    step: StepLogits,
    grid: AlphaGrid,
    mode: str = MODE_SINGLE_EXPERT_PER_STEP,
) -> AlphaAssignment:
    """Grid search for the fusion weights minimizing the KL-matching objective.

    single_expert_per_step restricts candidates to one nonzero weight at a
    time (n*T objective evaluations); joint_grid enumerates the full n^T
    Cartesian product and is guarded against blowup. Behavioral KLs are
    computed once per call, not per candidate. Ties break toward the
    smallest total |alpha|, then the earliest candidate in enumeration
    order (lowest expert index, then lowest grid value).
    """
    T = step.num_experts
    values = grid.values()
    n = len(values)

    if mode == MODE_SINGLE_EXPERT_PER_STEP:
        candidates = (
            _one_hot(T, t, a) for t in range(T) for a in values
        )
    elif mode == MODE_JOINT_GRID:
        if n**T > MAX_JOINT_CANDIDATES:
            raise GridTooLargeError(
                f"joint grid has {n**T} candidates (> {MAX_JOINT_CANDIDATES})"
            )
        candidates = (
            np.array(combo, dtype=np.float64)
            for combo in itertools.product(values, repeat=T)
        )
    else:
        raise ValueError(f"unknown search mode: {mode!r}")

    large_dist = softmax(step.large)
    behavioral = [behavioral_kls(e) for e in step.experts]

    best_alphas = None
    best_key = None
    evaluations = 0
    for alphas in candidates:
        obj = _objective(step, alphas, large_dist, behavioral)
        evaluations += 1
        key = (obj, float(np.abs(alphas).sum()))
        if best_key is None or key < best_key:
            best_key = key
            best_alphas = alphas

    return AlphaAssignment(
        alphas=best_alphas,
        mode=mode,
        objective_value=best_key[0],
        evaluations=evaluations,
    )


def _one_hot(T: int, index: int, value: float) -> np.ndarray:
    out = np.zeros(T)
    out[index] = value
    return out


def total_variation(p: ProbabilityDistribution, q: ProbabilityDistribution) -> float:
    """Total-variation distance, 0.5 * L1."""
    _require_compatible(p.vocab, q.vocab)
    return 0.5 * float(np.abs(p.probs - q.probs).sum())
