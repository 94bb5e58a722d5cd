"""Command-line entry point.

Subcommands: train-ngram, serve-ngram, decode, eval, sweep. Exit codes:
0 success, 1 usage error, 2 runtime error. All normal output is
machine-stable (no timestamps, deterministic ordering).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .core import AlphaGrid
from .decoder import (
    ADAPTIVE_MULTI,
    ADAPTIVE_SINGLE,
    FIXED,
    PROXY,
    DecodeConfig,
    ExpertProviders,
    ProviderSet,
    SamplingConfig,
    decode,
    write_traces,
)
from .errors import LogitFuseError
from .harness import (
    FusionScorer,
    load_experiment_spec,
    perplexity,
    run_experiment,
    write_report,
)
from .providers import (
    load_ngram,
    make_logit_server,
    provider_from_spec,
    save_ngram,
    train_ngram,
)

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _parse_grid(text: str) -> AlphaGrid:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be LO:HI:STEP, got {text!r}")
    return AlphaGrid(lower=float(parts[0]), upper=float(parts[1]), step=float(parts[2]))


def _parse_expert(text: str) -> tuple[str, str, str]:
    name, sep, rest = text.partition("=")
    specs = rest.split(",")
    if not sep or len(specs) != 2:
        raise ValueError(
            f"expert must be NAME=FT_SPEC,BASE_SPEC, got {text!r}"
        )
    return name, specs[0], specs[1]


def _build_provider_set(args) -> ProviderSet:
    experts = []
    for raw in args.expert:
        name, ft_spec, base_spec = _parse_expert(raw)
        experts.append(
            ExpertProviders(
                name=name,
                fine_tuned=provider_from_spec(ft_spec),
                base=provider_from_spec(base_spec),
            )
        )
    return ProviderSet(large=provider_from_spec(args.large), experts=experts)


def _read_prompt(args) -> bytes:
    if args.prompt is not None:
        return args.prompt.encode("utf-8")
    with open(args.prompt_file, "rb") as fh:
        return fh.read()


def _decode_config(args, num_experts: int) -> DecodeConfig:
    mode = args.mode
    fixed_alphas = None
    if mode.startswith("fixed:"):
        fixed_alphas = [float(a) for a in mode.split(":", 1)[1].split(",")]
        if len(fixed_alphas) == 1 and num_experts > 1:
            fixed_alphas = fixed_alphas * num_experts
        mode = FIXED
    elif mode == "adaptive":
        mode = ADAPTIVE_SINGLE if num_experts == 1 else ADAPTIVE_MULTI
    elif mode == "proxy":
        mode = PROXY
    else:
        raise ValueError(f"mode must be adaptive, proxy, or fixed:A[,A...], got {args.mode!r}")
    return DecodeConfig(
        max_new_tokens=args.max_tokens,
        mode=mode,
        fixed_alphas=fixed_alphas,
        grid=_parse_grid(args.grid),
        sampling=SamplingConfig(rng_seed=args.seed),
        eos_token=args.eos_token,
    )


def _cmd_train_ngram(args) -> int:
    with open(args.input, "rb") as fh:
        corpus = fh.read()
    model = train_ngram(corpus, order=args.order, smoothing_k=args.smoothing)
    save_ngram(model, args.out)
    print(f"trained order-{args.order} model on {len(corpus)} bytes -> {args.out}")
    return 0


def _cmd_serve_ngram(args) -> int:
    from .providers import NGramProvider

    provider = NGramProvider(load_ngram(args.model), path=args.model)
    server = make_logit_server(provider, port=args.port, name=args.name)
    host, port = server.server_address
    print(f"serving {args.model} at http://{host}:{port}", flush=True)
    server.serve_forever()
    return 0


def _cmd_decode(args) -> int:
    providers = _build_provider_set(args)
    providers.handshake_all()
    config = _decode_config(args, providers.num_experts)
    prompt = _read_prompt(args)
    result = decode(list(prompt), providers, config)
    generated = bytes(result.tokens[len(prompt):])
    if args.trace:
        write_traces(args.trace, result.traces)
    sys.stdout.buffer.write(generated)
    sys.stdout.buffer.write(b"\n")
    sys.stdout.flush()
    return 0


def _cmd_eval(args) -> int:
    spec = load_experiment_spec(args.spec)
    report = run_experiment(spec)
    write_report(report, args.out)
    for mode in sorted(report.table):
        for metric in sorted(report.table[mode]):
            print(f"{mode}\t{metric}\t{report.table[mode][metric]!r}")
    return 0


def _cmd_sweep(args) -> int:
    providers = _build_provider_set(args)
    providers.handshake_all()
    prompt = _read_prompt(args)
    if args.reference is not None:
        reference = args.reference.encode("utf-8")
    else:
        with open(args.reference_file, "rb") as fh:
            reference = fh.read()

    grid = _parse_grid(args.alphas)
    rows = []
    for alpha in grid.values():
        config = DecodeConfig(
            max_new_tokens=0,
            mode=FIXED,
            fixed_alphas=[float(alpha)] * providers.num_experts,
            sampling=SamplingConfig(rng_seed=args.seed),
        )
        scorer = FusionScorer(providers, config)
        rows.append((f"fixed:{alpha:g}", perplexity(scorer, reference, prompt=prompt)))
    adaptive_mode = ADAPTIVE_SINGLE if providers.num_experts == 1 else ADAPTIVE_MULTI
    config = DecodeConfig(
        max_new_tokens=0,
        mode=adaptive_mode,
        grid=_parse_grid(args.grid),
        sampling=SamplingConfig(rng_seed=args.seed),
    )
    scorer = FusionScorer(providers, config)
    rows.append(("adaptive", perplexity(scorer, reference, prompt=prompt)))

    print("mode,prompt_id,metric,value")
    for mode_name, value in rows:
        print(f"{mode_name},p0,perplexity,{value!r}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="logitfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ngram", help="train a byte-level n-gram model")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_ngram)

    p = sub.add_parser("serve-ngram", help="serve a model over the wire protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--name", default="ngram")
    p.set_defaults(func=_cmd_serve_ngram)

    p = sub.add_parser("decode", help="generate text with fused logits")
    _add_provider_args(p)
    _add_prompt_args(p)
    p.add_argument("--mode", default="adaptive")
    p.add_argument("--grid", default="0:2:0.1")
    p.add_argument("--max-tokens", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eos-token", type=int, default=None)
    p.add_argument("--trace", default=None)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("eval", help="run an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="fixed-weight comparison sweep")
    _add_provider_args(p)
    _add_prompt_args(p)
    ref = p.add_mutually_exclusive_group(required=True)
    ref.add_argument("--reference")
    ref.add_argument("--reference-file")
    p.add_argument("--alphas", default="0:2:0.5")
    p.add_argument("--grid", default="0:2:0.1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sweep)

    return parser


def _add_provider_args(p) -> None:
    p.add_argument("--large", required=True, help="ngram:PATH or http:URL")
    p.add_argument(
        "--expert",
        action="append",
        required=True,
        help="NAME=FT_SPEC,BASE_SPEC (repeatable)",
    )


def _add_prompt_args(p) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--prompt")
    group.add_argument("--prompt-file")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_EXIT
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (LogitFuseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
