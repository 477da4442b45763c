"""Command line interface.

Subcommands:
    pretrain  train the two-view encoders on a raw-sample file
    embed     run trained encoders over raw samples, write a feature store
    solve     sample one episode from a feature store and classify it
    eval      evaluate many episodes; supports sweeps, ablations, synthetic data

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or format
error, 4 numeric failure, 5 infeasible episode shape.

Configuration comes from an optional flat "key = value" file (--config)
overridden by command-line flags; unknown keys are rejected and every
value is range-checked up front. The effective configuration is echoed
into stdout ("#"-prefixed lines, or the report header) so each output
records its provenance. All output is deterministic: rerunning a command
with identical arguments produces identical bytes on stdout (timing goes
to stderr).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace

from .classifier import TaskTrainConfig
from .contrastive import (
    PretrainConfig,
    extract_features,
    load_encoder,
    load_raw_samples,
    pretrain,
    save_encoder,
)
from .data import EpisodeSpec, load_features, sample_episode, save_features
from .errors import DataFormatError, InfeasibleTaskError, NumericError
from .evaluate import (
    ABLATIONS,
    EvalConfig,
    GraphConfig,
    clustered_features,
    evaluate,
    serialize_report,
    solve_episode,
)
from .rng import derive_seed

_SYNTH_STREAM = 1 << 62  # seed-derivation index reserved for synthetic data


class UsageError(ValueError):
    """Bad flags, bad config keys, or out-of-range values."""


@dataclass(frozen=True)
class RunConfig:
    """Every tunable default, resolvable from file and flags."""

    m: int = 10
    gamma: int = 3
    alpha_init: float = 1.0
    top_m_rule: str = "union"
    lambda_mix: float = 0.95
    copies: int = 120
    beta: float = 0.5
    kl_direction: str = "forward"
    stage1_epochs: int = 11
    stage2_epochs: int = 1000
    lr1: float = 1e-2
    lr2: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    tau: float = 0.1
    pretrain_epochs: int = 30
    pretrain_lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    embed_dim: int = 32
    hidden_dims: tuple[int, ...] = (64,)
    seed: int = 0


def _parse_int(text: str, key: str, lo: int | None = None) -> int:
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"{key}: expected an integer, got {text!r}") from None
    if lo is not None and value < lo:
        raise UsageError(f"{key}: must be >= {lo}, got {value}")
    return value


def _parse_float(
    text: str,
    key: str,
    lo: float | None = None,
    hi: float | None = None,
    lo_open: bool = False,
    hi_open: bool = False,
) -> float:
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"{key}: expected a number, got {text!r}") from None
    if value != value or value in (float("inf"), float("-inf")):
        raise UsageError(f"{key}: must be finite")
    if lo is not None and (value < lo or (lo_open and value == lo)):
        raise UsageError(f"{key}: must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (value > hi or (hi_open and value == hi)):
        raise UsageError(f"{key}: must be {'<' if hi_open else '<='} {hi}")
    return value


def _parse_choice(text: str, key: str, choices: tuple[str, ...]) -> str:
    if text not in choices:
        raise UsageError(f"{key}: expected one of {choices}, got {text!r}")
    return text


def _parse_dims(text: str, key: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise UsageError(f"{key}: expected comma-separated widths")
    return tuple(_parse_int(p, key, lo=1) for p in parts)


_KEY_PARSERS = {
    "m": lambda t: _parse_int(t, "m", lo=1),
    "gamma": lambda t: _parse_int(t, "gamma", lo=0),
    "alpha_init": lambda t: _parse_float(t, "alpha_init"),
    "top_m_rule": lambda t: _parse_choice(t, "top_m_rule", ("union", "intersection")),
    "lambda_mix": lambda t: _parse_float(t, "lambda_mix", lo=0.0, hi=1.0, lo_open=True),
    "copies": lambda t: _parse_int(t, "copies", lo=0),
    "beta": lambda t: _parse_float(t, "beta", lo=0.0, hi=1.0),
    "kl_direction": lambda t: _parse_choice(t, "kl_direction", ("forward", "reverse")),
    "stage1_epochs": lambda t: _parse_int(t, "stage1_epochs", lo=0),
    "stage2_epochs": lambda t: _parse_int(t, "stage2_epochs", lo=0),
    "lr1": lambda t: _parse_float(t, "lr1", lo=0.0, lo_open=True),
    "lr2": lambda t: _parse_float(t, "lr2", lo=0.0, lo_open=True),
    "adam_beta1": lambda t: _parse_float(t, "adam_beta1", lo=0.0, hi=1.0, hi_open=True),
    "adam_beta2": lambda t: _parse_float(t, "adam_beta2", lo=0.0, hi=1.0, hi_open=True),
    "adam_eps": lambda t: _parse_float(t, "adam_eps", lo=0.0, lo_open=True),
    "tau": lambda t: _parse_float(t, "tau", lo=0.0, lo_open=True),
    "pretrain_epochs": lambda t: _parse_int(t, "pretrain_epochs", lo=0),
    "pretrain_lr": lambda t: _parse_float(t, "pretrain_lr", lo=0.0, lo_open=True),
    "momentum": lambda t: _parse_float(t, "momentum", lo=0.0, hi=1.0, hi_open=True),
    "batch_size": lambda t: _parse_int(t, "batch_size", lo=2),
    "embed_dim": lambda t: _parse_int(t, "embed_dim", lo=1),
    "hidden_dims": lambda t: _parse_dims(t, "hidden_dims"),
    "seed": lambda t: _parse_int(t, "seed"),
}


def load_config_file(path: str) -> dict[str, str]:
    """Read flat "key = value" lines; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip()] = value.strip()
    return values


def build_runconfig(args: argparse.Namespace) -> RunConfig:
    """Resolve defaults <- config file <- command-line flags, validating all."""
    raw: dict[str, str] = {}
    if getattr(args, "config", None):
        raw.update(load_config_file(args.config))
    for key in _KEY_PARSERS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            raw[key] = flag_value
    resolved = {}
    for key, text in raw.items():
        parser = _KEY_PARSERS.get(key)
        if parser is None:
            raise UsageError(f"unknown configuration key {key!r}")
        resolved[key] = parser(text)
    return RunConfig(**resolved)


def _train_config(rc: RunConfig, seed: int) -> TaskTrainConfig:
    return TaskTrainConfig(
        lambda_mix=rc.lambda_mix,
        copies=rc.copies,
        beta=rc.beta,
        stage1_epochs=rc.stage1_epochs,
        stage2_epochs=rc.stage2_epochs,
        lr1=rc.lr1,
        lr2=rc.lr2,
        adam_beta1=rc.adam_beta1,
        adam_beta2=rc.adam_beta2,
        adam_eps=rc.adam_eps,
        seed=seed,
        kl_reverse=rc.kl_direction == "reverse",
    )


def _graph_config(rc: RunConfig) -> GraphConfig:
    return GraphConfig(
        m=rc.m, gamma=rc.gamma, alpha_init=rc.alpha_init, top_m_rule=rc.top_m_rule
    )


def _echo_lines(rc: RunConfig, keys: tuple[str, ...], extra: dict[str, str]) -> list[str]:
    values = {f.name: getattr(rc, f.name) for f in fields(rc)}
    lines = []
    for key in keys:
        value = values[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"# {key} = {value}")
    lines.extend(f"# {key} = {value}" for key, value in extra.items())
    return lines


_PRETRAIN_KEYS = (
    "tau", "pretrain_epochs", "pretrain_lr", "momentum",
    "batch_size", "embed_dim", "hidden_dims", "seed",
)
_SOLVE_KEYS = (
    "m", "gamma", "alpha_init", "top_m_rule", "lambda_mix", "copies", "beta",
    "kl_direction", "stage1_epochs", "stage2_epochs", "lr1", "lr2",
    "adam_beta1", "adam_beta2", "adam_eps", "seed",
)


# --- commands --------------------------------------------------------------


def cmd_pretrain(args: argparse.Namespace, rc: RunConfig) -> int:
    samples = load_raw_samples(args.data)
    cfg = PretrainConfig(
        temperature=rc.tau,
        epochs=rc.pretrain_epochs,
        batch_size=rc.batch_size,
        learning_rate=rc.pretrain_lr,
        momentum=rc.momentum,
        seed=rc.seed,
        embed_dim=rc.embed_dim,
        hidden_dims=rc.hidden_dims,
    )
    params, trace = pretrain(samples, cfg)
    save_encoder(params, args.out)
    lines = _echo_lines(rc, _PRETRAIN_KEYS, {"data": args.data, "out": args.out})
    lines.append("# epoch\tloss")
    lines.extend(f"{i}\t{loss!r}" for i, loss in enumerate(trace))
    print("\n".join(lines))
    return 0


def cmd_embed(args: argparse.Namespace, rc: RunConfig) -> int:
    params = load_encoder(args.encoder)
    samples = load_raw_samples(args.data)
    labels = [s.class_id for s in samples]
    features = extract_features(params, samples, labels)
    save_features(features, args.out)
    lines = _echo_lines(rc, ("seed",), {"encoder": args.encoder, "data": args.data, "out": args.out})
    lines.append(f"# records\t{features.n_records}")
    lines.append(f"# dim\t{features.dim}")
    print("\n".join(lines))
    return 0


def _solve_ablation(args: argparse.Namespace) -> str:
    if args.no_aug and args.no_distill:
        return "no_both"
    if args.no_aug:
        return "no_aug"
    if args.no_distill:
        return "no_distill"
    return "full"


def cmd_solve(args: argparse.Namespace, rc: RunConfig) -> int:
    features = load_features(args.features)
    spec = EpisodeSpec(n_way=args.n, k_shot=args.k, q_query=args.q)
    episode = sample_episode(features, spec, derive_seed(rc.seed, 0))
    cfg = EvalConfig(
        spec=spec,
        tasks=1,
        seed=rc.seed,
        ablation=_solve_ablation(args),
        graph=_graph_config(rc),
        train=_train_config(rc, derive_seed(rc.seed, 1)),
    )
    preds, accuracy = solve_episode(features, episode, cfg)
    lines = _echo_lines(
        rc, _SOLVE_KEYS,
        {"features": args.features, "n": str(args.n), "k": str(args.k),
         "q": str(args.q), "ablation": cfg.ablation},
    )
    lines.append("# query\tpredicted_class\ttrue_class")
    for pos, (_, true_label) in enumerate(episode.query):
        lines.append(
            f"{pos}\t{episode.class_map[int(preds[pos])]}"
            f"\t{episode.class_map[true_label]}"
        )
    lines.append(f"# accuracy\t{accuracy!r}")
    print("\n".join(lines))
    return 0


def _parse_synthetic(text: str) -> dict[str, int | float]:
    spec: dict[str, int | float] = {
        "clusters": 5, "sep": 10.0, "dim": 64, "per_class": 100
    }
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in spec:
            raise UsageError(
                f"--synthetic: expected clusters=, sep=, dim=, per_class= parts, got {part!r}"
            )
        if key == "sep":
            spec[key] = _parse_float(value.strip(), "sep", lo=0.0)
        else:
            spec[key] = _parse_int(value.strip(), key, lo=1)
    return spec


def _sweep_list(text: str) -> list[int]:
    values = [_parse_int(p.strip(), "--sweep-k", lo=1) for p in text.split(",") if p.strip()]
    if not values:
        raise UsageError("--sweep-k: expected comma-separated shot counts")
    return values


def cmd_eval(args: argparse.Namespace, rc: RunConfig) -> int:
    if bool(args.features) == bool(args.synthetic):
        raise UsageError("provide exactly one of --features or --synthetic")
    extra: dict[str, str] = {}
    if args.synthetic:
        synth = _parse_synthetic(args.synthetic)
        data_seed = derive_seed(rc.seed, _SYNTH_STREAM)
        features = clustered_features(
            n_classes=int(synth["clusters"]),
            per_class=int(synth["per_class"]),
            dim=int(synth["dim"]),
            separation=float(synth["sep"]),
            seed=data_seed,
        )
        extra["synthetic"] = (
            f"clusters={synth['clusters']},sep={synth['sep']!r},"
            f"dim={synth['dim']},per_class={synth['per_class']}"
        )
    else:
        features = load_features(args.features)
        extra["features"] = args.features

    spec = EpisodeSpec(n_way=args.n, k_shot=args.k, q_query=args.q)
    base = EvalConfig(
        spec=spec,
        tasks=args.tasks,
        seed=rc.seed,
        ablation="full",
        graph=_graph_config(rc),
        train=_train_config(rc, rc.seed),
    )

    if args.sweep_k or args.ablate:
        k_list = _sweep_list(args.sweep_k) if args.sweep_k else [args.k]
        variants = ABLATIONS if args.ablate else ("full",)
        cells: dict[tuple[str, int], str] = {}
        for variant in variants:
            for k in k_list:
                cfg = replace(
                    base,
                    ablation=variant,
                    spec=replace(spec, k_shot=k),
                )
                report = evaluate(features, cfg, workers=args.workers, extra_echo=extra)
                cells[(variant, k)] = f"{report.mean_accuracy:.4f}+-{report.ci95:.4f}"
        lines = _echo_lines(
            rc, _SOLVE_KEYS,
            {**extra, "n": str(args.n), "q": str(args.q), "tasks": str(args.tasks)},
        )
        lines.append("# variant\t" + "\t".join(f"k={k}" for k in k_list))
        for variant in variants:
            lines.append(variant + "\t" + "\t".join(cells[(variant, k)] for k in k_list))
        text = "\n".join(lines) + "\n"
    else:
        report = evaluate(features, base, workers=args.workers, extra_echo=extra)
        print(f"evaluated {args.tasks} tasks in {report.wall_time:.2f}s", file=sys.stderr)
        text = serialize_report(report)

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# --- parser and dispatch ----------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value configuration file")
    group = parser.add_argument_group("configuration overrides")
    for key in _KEY_PARSERS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsgraph",
        description="Few-shot classification with contrastive pretraining "
        "and per-task graph feature aggregation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the two-view encoders")
    p.add_argument("--data", required=True, help="raw-sample file")
    p.add_argument("--out", required=True, help="encoder weight file to write")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("embed", help="extract features with trained encoders")
    p.add_argument("--encoder", required=True, help="encoder weight file")
    p.add_argument("--data", required=True, help="raw-sample file")
    p.add_argument("--out", required=True, help="feature store to write")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("solve", help="classify one sampled episode")
    p.add_argument("--features", required=True, help="feature store")
    p.add_argument("--n", required=True, type=int, help="classes per episode")
    p.add_argument("--k", required=True, type=int, help="support shots per class")
    p.add_argument("--q", required=True, type=int, help="query points per class")
    p.add_argument("--no-aug", action="store_true", help="skip mixup augmentation")
    p.add_argument("--no-distill", action="store_true", help="skip the distillation stage")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("eval", help="evaluate accuracy over many episodes")
    p.add_argument("--features", help="feature store")
    p.add_argument(
        "--synthetic",
        help="generate clustered Gaussian features, e.g. "
        "clusters=5,sep=10,dim=64,per_class=100",
    )
    p.add_argument("--n", required=True, type=int, help="classes per episode")
    p.add_argument("--k", required=True, type=int, help="support shots per class")
    p.add_argument("--q", required=True, type=int, help="query points per class")
    p.add_argument("--tasks", required=True, type=int, help="episode count")
    p.add_argument("--sweep-k", help="comma-separated shot counts to sweep")
    p.add_argument("--ablate", action="store_true", help="run the 4-variant ablation grid")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="write the report here instead of stdout")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return int(exc.code or 0)
    try:
        rc = build_runconfig(args)
        if getattr(args, "tasks", None) is not None and args.tasks < 1:
            raise UsageError("--tasks must be at least 1")
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise UsageError("--workers must be at least 1")
        return args.handler(args, rc)
    except UsageError as exc:
        print(f"fsgraph: error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"fsgraph: error: {exc}", file=sys.stderr)
        return 3
    except InfeasibleTaskError as exc:
        print(f"fsgraph: error: {exc}", file=sys.stderr)
        return 5
    except NumericError as exc:
        print(f"fsgraph: error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"fsgraph: error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"fsgraph: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
