"""Generation loop: gather logits, pick fusion weights, fuse, sample, trace.

One decoding step queries the large model plus every expert pair on the
same context, chooses per-expert fusion weights (adaptively via grid
search, or fixed constants), fuses the logits, and samples the next token.
Each step is recorded in a StepTrace so weight trajectories can be
inspected and exported.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    MODE_FIXED,
    MODE_SINGLE_EXPERT_PER_STEP,
    AlphaAssignment,
    AlphaGrid,
    ExpertLogits,
    KlPair,
    LogitVector,
    ProbabilityDistribution,
    StepLogits,
    VocabSpec,
    behavioral_kls,
    fuse_logits,
    kl_divergence,
    search_alpha,
    softmax,
)
from .errors import (
    DegenerateDistributionError,
    LogitFuseError,
    VocabMismatchError,
)
from .providers import Provider

TRACE_VERSION = 1

GREEDY = "greedy"
TEMPERATURE_TOP_P = "temperature_top_p"

ADAPTIVE_SINGLE = "adaptive_single"
ADAPTIVE_MULTI = "adaptive_multi"
FIXED = "fixed"
PROXY = "proxy"

STOP_EOS = "eos"
STOP_BUDGET = "budget"
STOP_PROVIDER_ERROR = "provider_error"


@dataclass
class SamplingConfig:
    strategy: str = GREEDY
    temperature: float = 0.05
    top_p: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.strategy not in (GREEDY, TEMPERATURE_TOP_P):
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


@dataclass
class DecodeConfig:
    max_new_tokens: int = 64
    mode: str = ADAPTIVE_MULTI
    fixed_alphas: list[float] | None = None
    grid: AlphaGrid = field(default_factory=AlphaGrid)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    eos_token: int | None = None
    record_timing: bool = True

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be nonnegative")
        if self.mode not in (ADAPTIVE_SINGLE, ADAPTIVE_MULTI, FIXED, PROXY):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.mode == FIXED:
            if self.fixed_alphas is None:
                raise ValueError("fixed mode requires fixed_alphas")
            for a in self.fixed_alphas:
                if not 0 <= a <= 8:
                    raise ValueError(f"fixed alpha {a} outside sanity bound [0, 8]")


@dataclass
class StepTrace:
    step_index: int
    token_id: int
    alphas: np.ndarray
    objective_value: float
    behavioral_kls: list[KlPair]
    fused_kls: KlPair
    wall_time_micros: int
    search_evaluations: int = 0


@dataclass
class DecodeResult:
    tokens: list[int]
    traces: list[StepTrace]
    stop_reason: str


@dataclass
class ExpertProviders:
    name: str
    fine_tuned: Provider
    base: Provider


@dataclass
class ProviderSet:
    """The large model plus T named expert pairs."""

    large: Provider
    experts: list[ExpertProviders]

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    def handshake_all(self) -> VocabSpec:
        """Handshake every provider and verify vocabulary compatibility."""
        reference = self.large.handshake()
        for e in self.experts:
            for p in (e.fine_tuned, e.base):
                vocab = p.handshake()
                if not reference.compatible_with(vocab):
                    raise VocabMismatchError(
                        f"provider for expert {e.name!r} has vocab {vocab}, "
                        f"large model has {reference}"
                    )
        return reference


def sample_token(
    dist: ProbabilityDistribution,
    sampling: SamplingConfig,
    rng: np.random.Generator | None = None,
) -> int:
    """Greedy argmax (ties to the lowest id) or seeded temperature/top-p draw."""
    probs = dist.probs
    if probs.max() <= 0:
        raise DegenerateDistributionError("no token has positive probability")
    if sampling.strategy == GREEDY:
        return int(np.argmax(probs))

    if rng is None:
        rng = np.random.default_rng(sampling.rng_seed)
    with np.errstate(divide="ignore"):
        scaled = np.log(probs) / sampling.temperature
    e = np.exp(scaled - scaled[np.isfinite(scaled)].max())
    e[~np.isfinite(scaled)] = 0.0
    p = e / e.sum()

    # nucleus: smallest probability-sorted prefix with mass >= top_p,
    # ties between equal probabilities broken toward lower token ids
    order = np.argsort(-p, kind="stable")
    cum = np.cumsum(p[order])
    cutoff = int(np.searchsorted(cum, sampling.top_p - 1e-12)) + 1
    keep = order[:cutoff]
    kept = p[keep] / p[keep].sum()
    return int(keep[rng.choice(len(keep), p=kept)])


def _alphas_for_mode(step: StepLogits, config: DecodeConfig) -> AlphaAssignment:
    from .core import _objective, behavioral_kls as _behav  # reuse kernel helpers

    T = step.num_experts
    if config.mode in (ADAPTIVE_SINGLE, ADAPTIVE_MULTI):
        if config.mode == ADAPTIVE_SINGLE and T != 1:
            raise ValueError(f"adaptive_single requires exactly one expert, got {T}")
        return search_alpha(step, config.grid, MODE_SINGLE_EXPERT_PER_STEP)
    if config.mode == PROXY:
        alphas = np.ones(T)
    else:
        alphas = np.asarray(config.fixed_alphas, dtype=np.float64)
        if alphas.shape != (T,):
            raise ValueError(
                f"fixed_alphas has shape {alphas.shape}, expected ({T},)"
            )
    large_dist = softmax(step.large)
    behavioral = [_behav(e) for e in step.experts]
    obj = _objective(step, alphas, large_dist, behavioral)
    return AlphaAssignment(alphas=alphas, mode=MODE_FIXED, objective_value=obj)


def gather_step_logits(context, providers: ProviderSet) -> StepLogits:
    """Query all 2T+1 providers concurrently on the identical context."""
    with ThreadPoolExecutor(max_workers=2 * providers.num_experts + 1) as pool:
        large_f = pool.submit(providers.large.logits, context)
        expert_fs = [
            (e.name, pool.submit(e.fine_tuned.logits, context),
             pool.submit(e.base.logits, context))
            for e in providers.experts
        ]
        large = large_f.result()
        experts = [
            ExpertLogits(name=name, fine_tuned=ft.result(), base=base.result())
            for name, ft, base in expert_fs
        ]
    return StepLogits(large=large, experts=experts)


def decode_step(
    context,
    providers: ProviderSet,
    config: DecodeConfig,
    step_index: int = 0,
    rng: np.random.Generator | None = None,
) -> tuple[int, StepTrace]:
    start = time.perf_counter()
    step = gather_step_logits(context, providers)
    assignment = _alphas_for_mode(step, config)

    large_dist = softmax(step.large)
    fused_dist = softmax(fuse_logits(step, assignment.alphas))
    fused = KlPair(
        forward=kl_divergence(fused_dist, large_dist),
        reverse=kl_divergence(large_dist, fused_dist),
    )
    behavioral = [behavioral_kls(e) for e in step.experts]

    token = sample_token(fused_dist, config.sampling, rng=rng)
    micros = (
        int((time.perf_counter() - start) * 1e6) if config.record_timing else 0
    )
    trace = StepTrace(
        step_index=step_index,
        token_id=token,
        alphas=assignment.alphas,
        objective_value=assignment.objective_value,
        behavioral_kls=behavioral,
        fused_kls=fused,
        wall_time_micros=micros,
        search_evaluations=assignment.evaluations,
    )
    return token, trace


def decode(prompt, providers: ProviderSet, config: DecodeConfig) -> DecodeResult:
    """Run decode_step until EOS, the token budget, or a provider failure."""
    tokens = [int(t) for t in prompt]
    if not tokens:
        raise ValueError("prompt must be nonempty")
    rng = np.random.default_rng(config.sampling.rng_seed)
    traces: list[StepTrace] = []
    stop_reason = STOP_BUDGET
    for i in range(config.max_new_tokens):
        try:
            token, trace = decode_step(
                tokens, providers, config, step_index=i, rng=rng
            )
        except LogitFuseError:
            stop_reason = STOP_PROVIDER_ERROR
            break
        tokens.append(token)
        traces.append(trace)
        if config.eos_token is not None and token == config.eos_token:
            stop_reason = STOP_EOS
            break
    return DecodeResult(tokens=tokens, traces=traces, stop_reason=stop_reason)


# ---------------------------------------------------------------------------
# Trace export (JSON Lines)


def trace_to_record(trace: StepTrace) -> dict:
    return {
        "step": trace.step_index,
        "token_id": trace.token_id,
        "alphas": [float(a) for a in trace.alphas],
        "objective": trace.objective_value,
        "kl_ft_base": [pair.forward for pair in trace.behavioral_kls],
        "kl_base_ft": [pair.reverse for pair in trace.behavioral_kls],
        "kl_fused_large": trace.fused_kls.forward,
        "kl_large_fused": trace.fused_kls.reverse,
        "micros": trace.wall_time_micros,
    }


def write_traces(path: str, traces: list[StepTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"trace_version": TRACE_VERSION}) + "\n")
        for trace in traces:
            fh.write(json.dumps(trace_to_record(trace), sort_keys=True) + "\n")


def read_traces(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("trace_version") != TRACE_VERSION:
            raise ValueError(f"unsupported trace_version: {header!r}")
        return [json.loads(line) for line in fh if line.strip()]
