"""Command-line front end.

Subcommands compose into pipelines: `simulate` writes a path, `train` fits
the generator to it, `sample` draws bootstrap paths from a checkpoint, and
`gb` / `cbb` run the two bootstraps end to end on a path. The experiment
commands (`acf-experiment`, `coverage-experiment`) drive the full studies.

Every command is deterministic given --seed; one-off commands draw from
fixed stream keys (100 simulate, 101 train, 102 sample, 103 cbb) so that
`gb` produces byte-identical artifacts to running `train` then `sample`
with the same seed. Exit codes: 0 success, 1 bad arguments or config,
2 runtime failure (partial outputs are left in place for inspection).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import bootstrap as bs
from . import gan
from . import harness
from . import timeseries as ts
from .config import ConfigError, ExperimentConfig, load_config

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage errors as ConfigError (exit 1)
    instead of calling sys.exit(2)."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(sp) -> None:
    sp.add_argument("--config", help="JSON config file (defaults apply otherwise)")
    sp.add_argument("--out", default="out", help="output directory (default: out)")
    sp.add_argument("--seed", type=int, help="override master seed")
    sp.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genboot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="simulate one AR(1) path -> path.csv")
    _add_common(sp)
    sp.add_argument("--phi", type=float, help="AR(1) coefficient")
    sp.add_argument("--length", type=int, help="path length T")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("train", help="fit the generator to a path -> model.ckpt, trace.csv")
    _add_common(sp)
    sp.add_argument("--path", help="input path CSV (default: <out>/path.csv)")
    sp.add_argument("--block-length", type=int, help="training block length")
    sp.add_argument("--steps", type=int, help="outer training iterations")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("sample", help="draw bootstrap paths from a checkpoint -> samples.csv")
    _add_common(sp)
    sp.add_argument("--model", help="checkpoint file (default: <out>/model.ckpt)")
    sp.add_argument("--m", type=int, help="number of bootstrap samples")
    sp.add_argument("--sample-length", type=int, help="generated path length")
    sp.set_defaults(func=_cmd_sample)

    sp = sub.add_parser(
        "gb",
        help="generator bootstrap of the AR(1) LS estimator "
        "-> model.ckpt, trace.csv, gb_estimates.csv, gb_summary.csv",
    )
    _add_common(sp)
    sp.add_argument("--path", help="input path CSV (default: <out>/path.csv)")
    sp.add_argument("--block-length", type=int, help="training block length")
    sp.add_argument("--steps", type=int, help="outer training iterations")
    sp.add_argument("--m", type=int, help="number of bootstrap samples")
    sp.add_argument("--sample-length", type=int, help="generated path length")
    sp.set_defaults(func=_cmd_gb)

    sp = sub.add_parser(
        "cbb",
        help="circular block bootstrap of the AR(1) LS estimator "
        "-> cbb_estimates_b*.csv, cbb_summary_b*.csv",
    )
    _add_common(sp)
    sp.add_argument("--path", help="input path CSV (default: <out>/path.csv)")
    sp.add_argument(
        "--block-size",
        type=int,
        action="append",
        help="resampling block size (repeatable; default from config)",
    )
    sp.add_argument("--m", type=int, help="number of bootstrap samples")
    sp.set_defaults(func=_cmd_cbb)

    sp = sub.add_parser("acf-experiment", help="correlogram fidelity study")
    _add_experiment_flags(sp)
    sp.set_defaults(func=_cmd_acf_experiment)

    sp = sub.add_parser("coverage-experiment", help="CI coverage study (GB vs CBB)")
    _add_experiment_flags(sp)
    sp.add_argument("--replications-cbb", type=int, help="CBB Monte Carlo replications")
    sp.add_argument(
        "--block-size", type=int, action="append", help="CBB block size (repeatable)"
    )
    sp.set_defaults(func=_cmd_coverage_experiment)

    return parser


def _add_experiment_flags(sp) -> None:
    _add_common(sp)
    sp.add_argument("--phi", type=float, help="run a single AR(1) coefficient")
    sp.add_argument("--length", type=int, help="observed path length T")
    sp.add_argument("--steps", type=int, help="outer training iterations")
    sp.add_argument("--m", type=int, help="bootstrap samples per replication")
    sp.add_argument("--replications-gb", type=int, help="Monte Carlo replications")
    sp.add_argument("--block-length", type=int, help="training block length")
    sp.add_argument("--sample-length", type=int, help="bootstrap sample length")
    sp.add_argument(
        "--oracle",
        action="store_true",
        help="replace the trained generator with the true model family "
        "fitted to the observed path (harness self-check)",
    )


_OVERRIDES = (
    ("seed", "master_seed"),
    ("workers", "workers"),
    ("length", "path_length"),
    ("m", "n_samples"),
    ("block_length", "block_length"),
    ("sample_length", "sample_length"),
    ("replications_gb", "replications_gb"),
    ("replications_cbb", "replications_cbb"),
)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    for attr, field in _OVERRIDES:
        value = getattr(args, attr, None)
        if value is not None:
            changes[field] = value
    if getattr(args, "phi", None) is not None:
        changes["phis"] = (args.phi,)
    if getattr(args, "block_size", None):
        changes["cbb_block_sizes"] = tuple(args.block_size)
    if getattr(args, "oracle", False):
        changes["oracle_mode"] = True
    if getattr(args, "steps", None) is not None:
        changes["gan"] = dataclasses.replace(cfg.gan, total_steps=args.steps)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _prov(cfg: ExperimentConfig) -> str:
    return harness._provenance(cfg)


def _input_path(args, default_name: str, attr: str = "path") -> str:
    explicit = getattr(args, attr, None)
    return explicit if explicit else os.path.join(args.out, default_name)


def _cmd_simulate(cfg: ExperimentConfig, args) -> None:
    rng = harness.stream(cfg.master_seed, 100)
    path = ts.simulate_ar1(ts.Ar1Spec(cfg.phis[0], cfg.path_length), rng)
    ts.write_path_csv(path, os.path.join(args.out, "path.csv"), provenance=_prov(cfg))


def _train(cfg: ExperimentConfig, args):
    path = ts.read_path_csv(_input_path(args, "path.csv"))
    rng = harness.stream(cfg.master_seed, 101)
    gen, disc, trace = bs.fit_generator(path, cfg.gan, cfg.block_length, rng)
    gan.save_gan_checkpoint(os.path.join(args.out, "model.ckpt"), gen, disc, cfg.gan)
    trace.write_csv(os.path.join(args.out, "trace.csv"), provenance=_prov(cfg))
    return gen


def _cmd_train(cfg: ExperimentConfig, args) -> None:
    _train(cfg, args)


def _write_samples_csv(samples, file, prov) -> None:
    with open(file, "w", encoding="utf-8") as fh:
        fh.write(f"# {prov}\n")
        fh.write("sample_index," + ",".join(f"t{j}" for j in range(samples.shape[1])) + "\n")
        for i, row in enumerate(samples):
            fh.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _cmd_sample(cfg: ExperimentConfig, args) -> None:
    gen, _, gan_cfg, _ = gan.load_gan_checkpoint(_input_path(args, "model.ckpt", "model"))
    rng = harness.stream(cfg.master_seed, 102)
    samples = bs.gb_sample(gen, gan_cfg, cfg.resolved_sample_length, cfg.n_samples, rng)
    _write_samples_csv(samples, os.path.join(args.out, "samples.csv"), _prov(cfg))


def _cmd_gb(cfg: ExperimentConfig, args) -> None:
    gen = _train(cfg, args)
    rng = harness.stream(cfg.master_seed, 102)
    samples = bs.gb_sample(gen, cfg.gan, cfg.resolved_sample_length, cfg.n_samples, rng)
    result = bs.gb_statistics(ts.ls_estimate_batch(samples), cfg.levels)
    prov = _prov(cfg)
    bs.write_estimates_csv(result, os.path.join(args.out, "gb_estimates.csv"), prov)
    bs.write_summary_csv(result, os.path.join(args.out, "gb_summary.csv"), prov)


def _cmd_cbb(cfg: ExperimentConfig, args) -> None:
    path = ts.read_path_csv(_input_path(args, "path.csv"))
    prov = _prov(cfg)
    for i, block in enumerate(cfg.cbb_block_sizes):
        rng = harness.stream(cfg.master_seed, 103, i)
        result = bs.cbb_bootstrap(
            path, block, None, cfg.n_samples, cfg.levels, rng,
            batch_statistic=ts.ls_estimate_batch,
        )
        bs.write_estimates_csv(
            result, os.path.join(args.out, f"cbb_estimates_b{block}.csv"), prov
        )
        bs.write_summary_csv(
            result, os.path.join(args.out, f"cbb_summary_b{block}.csv"), prov
        )


def _cmd_acf_experiment(cfg: ExperimentConfig, args) -> None:
    harness.run_acf_experiment(cfg, args.out)


def _cmd_coverage_experiment(cfg: ExperimentConfig, args) -> None:
    harness.run_coverage_experiment(cfg, args.out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        args.func(cfg, args)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary; exit code carries the signal
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
