"""Desk-scale experiment runner.

Compares decoding modes (large model alone, fixed fusion weights, proxy,
adaptive) over a prompt set, scoring byte-level perplexity and exact
match, and exporting per-step weight trajectories alongside a flat CSV
for plotting.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import AlphaGrid, ProbabilityDistribution, fuse_logits, softmax
from .decoder import (
    ADAPTIVE_MULTI,
    ADAPTIVE_SINGLE,
    FIXED,
    PROXY,
    DecodeConfig,
    DecodeResult,
    ProviderSet,
    SamplingConfig,
    StepTrace,
    _alphas_for_mode,
    decode,
    gather_step_logits,
    trace_to_record,
    write_traces,
)
from .errors import LogitFuseError
from .providers import Provider, provider_from_spec
from .decoder import ExpertProviders

METRIC_PERPLEXITY = "perplexity"
METRIC_EXACT_MATCH = "exact_match"
METRIC_MEAN_ALPHA = "mean_alpha"

LOGPROB_FLOOR = 1e-300


def exact_match(generated: bytes, reference: bytes) -> int:
    """1 iff the two byte strings agree after trimming trailing whitespace."""
    return int(generated.rstrip() == reference.rstrip())


class ProviderScorer:
    """Next-token distributions straight from a single provider."""

    def __init__(self, provider: Provider):
        self.provider = provider

    def next_token_dist(self, context) -> ProbabilityDistribution:
        return softmax(self.provider.logits(context))


class FusionScorer:
    """Next-token distributions from the fused ensemble under one decode mode.

    Records the weight assignment chosen at each scored position, so
    teacher-forced runs yield the same trajectory data as free decoding.
    """

    def __init__(self, providers: ProviderSet, config: DecodeConfig):
        self.providers = providers
        self.config = config
        self.alpha_history: list[np.ndarray] = []

    def next_token_dist(self, context) -> ProbabilityDistribution:
        step = gather_step_logits(context, self.providers)
        assignment = _alphas_for_mode(step, self.config)
        self.alpha_history.append(assignment.alphas)
        return softmax(fuse_logits(step, assignment.alphas))


def perplexity(scorer, text: bytes, prompt: bytes = b"") -> float:
    """exp of mean negative log-probability per byte, teacher-forced.

    Every byte of `text` is scored given the preceding prompt+text prefix;
    without a prompt the first byte has no context and is skipped.
    """
    if not text:
        raise ValueError("text must be nonempty")
    ids = list(prompt) + list(text)
    start = max(len(prompt), 1)
    if start >= len(ids):
        raise ValueError("nothing to score: need context before the first byte")
    total = 0.0
    count = 0
    for i in range(start, len(ids)):
        dist = scorer.next_token_dist(ids[:i])
        total -= math.log(max(float(dist.probs[ids[i]]), LOGPROB_FLOOR))
        count += 1
    return math.exp(total / count)


# ---------------------------------------------------------------------------
# Experiment specs and reports


@dataclass
class PromptCase:
    prompt_id: str
    prompt: bytes
    reference: bytes | None = None


@dataclass
class ModeSpec:
    name: str
    config: DecodeConfig


@dataclass
class ExperimentSpec:
    providers: ProviderSet
    prompts: list[PromptCase]
    modes: list[ModeSpec]
    metrics: list[str] = field(
        default_factory=lambda: [METRIC_PERPLEXITY, METRIC_EXACT_MATCH]
    )
    seed: int = 0

    def __post_init__(self):
        if not self.prompts:
            raise ValueError("prompt set must be nonempty")
        if not self.modes:
            raise ValueError("at least one mode is required")
        names = [m.name for m in self.modes]
        if len(set(names)) != len(names):
            raise ValueError(f"mode names must be unique: {names}")


@dataclass
class ExperimentReport:
    table: dict  # mode -> metric -> mean value
    rows: list  # (mode, prompt_id, metric, value)
    trajectories: dict  # (mode, prompt_id) -> list[StepTrace]
    stop_reasons: dict  # (mode, prompt_id) -> str
    config_echo: dict
    seed: int


def _mode_config(mode: ModeSpec, seed: int) -> DecodeConfig:
    cfg = mode.config
    sampling = SamplingConfig(
        strategy=cfg.sampling.strategy,
        temperature=cfg.sampling.temperature,
        top_p=cfg.sampling.top_p,
        rng_seed=seed,
    )
    return DecodeConfig(
        max_new_tokens=cfg.max_new_tokens,
        mode=cfg.mode,
        fixed_alphas=cfg.fixed_alphas,
        grid=cfg.grid,
        sampling=sampling,
        eos_token=cfg.eos_token,
        record_timing=cfg.record_timing,
    )


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Decode and score every mode x prompt cell with identical seeds."""
    spec.providers.handshake_all()
    rows = []
    trajectories = {}
    stop_reasons = {}
    for mode in spec.modes:
        config = _mode_config(mode, spec.seed)
        for case in spec.prompts:
            try:
                result = decode(list(case.prompt), spec.providers, config)
            except LogitFuseError as exc:
                stop_reasons[(mode.name, case.prompt_id)] = f"error: {exc}"
                continue
            trajectories[(mode.name, case.prompt_id)] = result.traces
            stop_reasons[(mode.name, case.prompt_id)] = result.stop_reason
            rows.extend(
                _score_case(spec, mode, config, case, result)
            )

    table: dict = {}
    for mode_name, _, metric, value in rows:
        table.setdefault(mode_name, {}).setdefault(metric, []).append(value)
    table = {
        mode_name: {metric: float(np.mean(vals)) for metric, vals in metrics.items()}
        for mode_name, metrics in table.items()
    }
    config_echo = {
        "modes": sorted(m.name for m in spec.modes),
        "metrics": sorted(spec.metrics),
        "prompts": sorted(c.prompt_id for c in spec.prompts),
    }
    return ExperimentReport(
        table=table,
        rows=rows,
        trajectories=trajectories,
        stop_reasons=stop_reasons,
        config_echo=config_echo,
        seed=spec.seed,
    )


def _score_case(spec, mode, config, case, result: DecodeResult) -> list:
    rows = []
    generated = bytes(result.tokens[len(case.prompt):])
    if result.stop_reason == "eos" and generated:
        generated = generated[:-1]

    if METRIC_EXACT_MATCH in spec.metrics and case.reference is not None:
        rows.append(
            (mode.name, case.prompt_id, METRIC_EXACT_MATCH,
             float(exact_match(generated, case.reference)))
        )
    if METRIC_PERPLEXITY in spec.metrics and case.reference:
        scorer = FusionScorer(spec.providers, config)
        rows.append(
            (mode.name, case.prompt_id, METRIC_PERPLEXITY,
             perplexity(scorer, case.reference, prompt=case.prompt))
        )
    if METRIC_MEAN_ALPHA in spec.metrics and result.traces:
        stacked = np.stack([t.alphas for t in result.traces])
        for idx, expert in enumerate(spec.providers.experts):
            rows.append(
                (mode.name, case.prompt_id,
                 f"{METRIC_MEAN_ALPHA}:{expert.name}",
                 float(stacked[:, idx].mean()))
            )
    return rows


def write_report(report: ExperimentReport, outdir: str) -> None:
    """Emit report.json, report.csv, and one trace file per (mode, prompt)."""
    os.makedirs(outdir, exist_ok=True)
    doc = {
        "seed": report.seed,
        "table": report.table,
        "stop_reasons": {
            f"{mode}/{pid}": reason
            for (mode, pid), reason in report.stop_reasons.items()
        },
        "config": report.config_echo,
    }
    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(outdir, "report.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "prompt_id", "metric", "value"])
        for row in sorted(report.rows):
            writer.writerow([row[0], row[1], row[2], repr(row[3])])
    traces_dir = os.path.join(outdir, "traces")
    os.makedirs(traces_dir, exist_ok=True)
    for (mode, pid), traces in sorted(report.trajectories.items()):
        write_traces(os.path.join(traces_dir, f"{mode}__{pid}.jsonl"), traces)


# ---------------------------------------------------------------------------
# Spec file loading


def load_experiment_spec(path: str) -> ExperimentSpec:
    """Read an experiment description from a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)

    large = provider_from_spec(doc["large_model"])
    experts = [
        ExpertProviders(
            name=e["name"],
            fine_tuned=provider_from_spec(e["fine_tuned"]),
            base=provider_from_spec(e["base"]),
        )
        for e in doc["experts"]
    ]
    providers = ProviderSet(large=large, experts=experts)

    prompts = [
        PromptCase(
            prompt_id=p["id"],
            prompt=p["prompt"].encode("utf-8"),
            reference=p["reference"].encode("utf-8") if "reference" in p else None,
        )
        for p in doc["prompts"]
    ]

    defaults = doc.get("defaults", {})
    max_new_tokens = int(defaults.get("max_new_tokens", 64))
    sampling_doc = defaults.get("sampling", {})
    sampling = SamplingConfig(
        strategy=sampling_doc.get("strategy", "greedy"),
        temperature=float(sampling_doc.get("temperature", 0.05)),
        top_p=float(sampling_doc.get("top_p", 1.0)),
    )
    eos_token = defaults.get("eos_token")

    modes = []
    for m in doc["modes"]:
        grid_doc = m.get("grid")
        grid = AlphaGrid(*grid_doc) if grid_doc else AlphaGrid()
        modes.append(
            ModeSpec(
                name=m["name"],
                config=DecodeConfig(
                    max_new_tokens=int(m.get("max_new_tokens", max_new_tokens)),
                    mode=m["mode"],
                    fixed_alphas=m.get("alphas"),
                    grid=grid,
                    sampling=sampling,
                    eos_token=eos_token,
                ),
            )
        )

    return ExperimentSpec(
        providers=providers,
        prompts=prompts,
        modes=modes,
        metrics=doc.get("metrics", [METRIC_PERPLEXITY, METRIC_EXACT_MATCH]),
        seed=int(doc.get("seed", 0)),
    )
