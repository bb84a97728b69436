"""Command-line entry point: ``miracle <subcommand> ...``.

Every run writes ``config.json`` (the fully resolved arguments) into its
output directory; ``--resolved config.json`` replays a run with the same
settings. Exit codes: 0 success, 1 usage or configuration error, 2 numeric
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .baselines import BASELINES, BaselineKind, impute
from .data import DataError, Dataset, ImputedMatrix, Standardizer, load_csv, load_mask, merge_imputation, save_mask, write_csv
from .evaluate import ConfigError, aggregate, congeniality, imputation_rmse, prediction_rmse, run_benchmark, validate_suite, write_benchmark
from .network import NetworkParams, forward
from .synth import MECHANISMS, AmputeSpec, ampute_detailed, generate_scm, sample_scm, save_sidecar
from .trainer import TrainConfig, threshold_dag, train

logger = logging.getLogger("miracle")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
_DEFAULTS = TrainConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for numeric failures here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--beta1", type=float, default=_DEFAULTS.beta1, help="weight of the acyclicity term")
    g.add_argument("--beta2", type=float, default=_DEFAULTS.beta2, help="weight of the moment-matching term")
    g.add_argument("--lr", type=float, default=_DEFAULTS.lr)
    g.add_argument("--epochs", type=int, default=_DEFAULTS.epochs)
    g.add_argument("--refresh", type=int, default=_DEFAULTS.refresh, help="epochs between re-imputations (0 = never)")
    g.add_argument("--queue", type=int, default=_DEFAULTS.queue, help="number of imputations averaged")
    g.add_argument("--tol", type=float, default=_DEFAULTS.tol)
    g.add_argument("--hidden", type=int, default=None, help="hidden width (default: number of features)")
    g.add_argument("--depth", type=int, default=_DEFAULTS.depth)
    g.add_argument("--no-l1", dest="use_l1", action="store_false")
    g.add_argument("--no-r1", dest="use_r1", action="store_false")
    g.add_argument("--no-r2", dest="use_r2", action="store_false")
    g.add_argument("--acyclicity", choices=("expm", "poly"), default=_DEFAULTS.acyclicity)
    g.add_argument("--threshold", type=float, default=0.3, help="edge threshold for the reported DAG")
    g.add_argument("--no-standardize", dest="standardize", action="store_false",
                   help="train on raw values instead of z-scores")


def _baseline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--baseline", choices=BASELINES, default="mean")
    p.add_argument("--k", type=int, default=5, help="neighbours for knn")
    p.add_argument("--sweeps", type=int, default=10, help="sweeps for chained")
    p.add_argument("--ridge", type=float, default=1e-2, help="ridge penalty for chained")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="miracle", description="Causally-regularized refinement of missing-data imputation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.commands = {}

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        parser.commands[name] = p
        p.add_argument("--output", help="output directory (required)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--resolved", help="config.json from an earlier run; explicit flags still win")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    p = command("simulate", "sample a random linear SCM")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--n", type=int, default=1000)

    p = command("ampute", "remove values from a complete CSV")
    p.add_argument("--input")
    p.add_argument("--mechanism", choices=MECHANISMS, default="mar")
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--target-fraction", type=float, default=None)
    p.add_argument("--protect", type=int, nargs="*", default=[], help="column indices never amputed")

    p = command("impute", "baseline imputation, optionally refined")
    p.add_argument("--input")
    p.add_argument("--missing-token", default=None)
    _baseline_flags(p)
    p.add_argument("--refine", action="store_true", help="refine the baseline with MIRACLE")
    p.add_argument("--checkpoint", help="impute with saved network parameters instead of training")
    _train_flags(p)

    p = command("train", "train MIRACLE on a CSV and save the network")
    p.add_argument("--input")
    p.add_argument("--missing-token", default=None)
    _baseline_flags(p)
    _train_flags(p)

    p = command("evaluate", "score an imputation against ground truth")
    p.add_argument("--input", help="imputed CSV")
    p.add_argument("--truth", help="complete CSV")
    p.add_argument("--mask", help="mask CSV (1 = observed)")
    p.add_argument("--test", help="complete test CSV for the downstream prediction error")
    p.add_argument("--target", type=int, default=-1, help="prediction target column")
    p.add_argument("--lam", type=float, default=1.0, help="ridge penalty of the downstream model")

    p = command("benchmark", "run a grid of synthetic experiments")
    p.add_argument("--config", help="suite JSON")
    p.add_argument("--jobs", type=int, default=1)
    return parser


REQUIRED = {
    "simulate": ("output",),
    "ampute": ("output", "input"),
    "impute": ("output", "input"),
    "train": ("output", "input"),
    "evaluate": ("output", "input", "truth", "mask"),
    "benchmark": ("output", "config"),
}


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--resolved`` act as defaults that explicit flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.resolved is not None:
        try:
            saved = json.loads(Path(args.resolved).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read resolved config {args.resolved}: {exc}") from None
        if saved.get("command") != args.command:
            raise UsageError(f"resolved config is for {saved.get('command')!r}, not {args.command!r}")
        sub = parser.commands[args.command]
        sub.set_defaults(**{k: v for k, v in saved.items() if k not in ("command", "resolved")})
        args = parser.parse_args(argv)
    missing = [f"--{k}" for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required {', '.join(missing)}")
    return args


def _write_config(out: Path, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("resolved", "verbose")}
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        beta1=args.beta1, beta2=args.beta2, lr=args.lr, epochs=args.epochs, refresh=args.refresh,
        queue=args.queue, tol=args.tol, seed=args.seed, hidden=args.hidden, depth=args.depth,
        use_l1=args.use_l1, use_r1=args.use_r1, use_r2=args.use_r2, acyclicity=args.acyclicity,
    )


def _seed_imputation(args, ds: Dataset) -> ImputedMatrix:
    kind = BaselineKind(args.baseline, k=args.k, sweeps=args.sweeps, ridge=args.ridge)
    return impute(ds, kind, args.seed)


def _refine(args, ds: Dataset, seed: ImputedMatrix, out: Path):
    """Train on z-scores (unless disabled) and map the result back to the input scale."""
    stats = Standardizer.fit(ds) if args.standardize else None
    work, start = ds, seed
    if stats is not None:
        work = stats.apply(ds)
        start = merge_imputation(work, stats.transform(seed.values), seed.provenance)
    res = train(work, start, _train_config(args))
    values = res.imputed.values if stats is None else stats.inverse(res.imputed.values)
    res.adjacency.to_csv(out / "adjacency.csv")
    res.write_log(out / "train_log.jsonl")
    res.params.save(out / "checkpoint.json")
    if stats is not None:
        (out / "scaling.json").write_text(json.dumps({"means": stats.means.tolist(), "stds": stats.stds.tolist()}),
                                          encoding="utf-8")
    _, acyclic = threshold_dag(res.adjacency, args.threshold)
    logger.info("learned graph at threshold %g is %s", args.threshold, "acyclic" if acyclic else "cyclic")
    return merge_imputation(ds, values, "miracle"), acyclic


def cmd_simulate(args, out: Path) -> None:
    if args.d < 2:
        raise UsageError("--d must be at least 2")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    scm = generate_scm(args.d, args.seed)
    ds = sample_scm(scm, args.n, args.seed)
    write_csv(out / "values.csv", ds.values, ds.feature_names)
    save_mask(out / "mask.csv", ds)
    save_sidecar(out / "spec.json", scm, None, seed=args.seed, n=args.n)


def cmd_ampute(args, out: Path) -> None:
    full = load_csv(args.input)
    if full.n_missing:
        raise DataError("ampute needs a complete input file")
    spec = AmputeSpec(args.mechanism, args.rate, target_fraction=args.target_fraction, protected=tuple(args.protect))
    ds, resolved = ampute_detailed(full, spec, args.seed)
    write_csv(out / "values.csv", ds.values, ds.feature_names)
    write_csv(out / "truth.csv", full.values, full.feature_names)
    save_mask(out / "mask.csv", ds)
    save_sidecar(out / "ampute.json", None, resolved, seed=args.seed)


def cmd_impute(args, out: Path, force_refine: bool = False) -> None:
    ds = load_csv(args.input, args.missing_token)
    seed = _seed_imputation(args, ds)
    summary = {"baseline": args.baseline, "refined": False, "missing_cells": ds.n_missing}
    result = seed
    if getattr(args, "checkpoint", None):
        result = _from_checkpoint(args, ds, seed)
        summary["refined"] = True
    elif force_refine or args.refine:
        result, acyclic = _refine(args, ds, seed, out)
        summary.update(refined=True, acyclic_at_threshold=acyclic)
    write_csv(out / "imputed.csv", result.values, ds.feature_names)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")


def _from_checkpoint(args, ds: Dataset, seed: ImputedMatrix) -> ImputedMatrix:
    params = NetworkParams.load(args.checkpoint)
    if params.d != ds.d:
        raise DataError(f"checkpoint has {params.d} features, input has {ds.d}")
    scaling = Path(args.checkpoint).with_name("scaling.json")
    x = seed.values
    if scaling.exists():
        s = json.loads(scaling.read_text(encoding="utf-8"))
        stats = Standardizer(np.array(s["means"]), np.array(s["stds"]))
        return merge_imputation(ds, stats.inverse(forward(params, stats.transform(x))[0]), "checkpoint")
    return merge_imputation(ds, forward(params, x)[0], "checkpoint")


def cmd_evaluate(args, out: Path) -> None:
    imputed = load_csv(args.input)
    truth = load_csv(args.truth)
    mask = load_mask(args.mask)
    if not (imputed.values.shape == truth.values.shape == mask.shape):
        raise DataError("imputed, truth and mask files differ in shape")
    target = args.target % truth.d
    metrics = {
        "imputation_rmse": imputation_rmse(truth.values, imputed.values, mask),
        "congeniality": congeniality(truth.values, imputed.values, target, args.lam),
    }
    if args.test:
        metrics["prediction_rmse"] = prediction_rmse(imputed.values, load_csv(args.test), target, args.lam)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(metrics))


def cmd_benchmark(args, out: Path) -> None:
    try:
        suite = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"/: not valid JSON ({exc})") from None
    suite = validate_suite(suite)
    (out / "suite.json").write_text(json.dumps(suite, indent=2) + "\n", encoding="utf-8")
    reports = run_benchmark(suite, max(1, args.jobs))
    write_benchmark(out, suite, reports)
    for row in aggregate(reports):
        logger.info("%s %s refined=%s terms=%s rmse=%.4f", row["mechanism"], row["baseline"], row["refined"],
                    row["terms"], row["imputation_rmse_mean"])


COMMANDS = {
    "simulate": cmd_simulate,
    "ampute": cmd_ampute,
    "impute": cmd_impute,
    "train": lambda args, out: cmd_impute(args, out, force_refine=True),
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    warnings.simplefilter("default")
    try:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        _write_config(out, args)
        COMMANDS[args.command](args, out)
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DataError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
