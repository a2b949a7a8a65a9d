"""Command-line interface.

Subcommands: ``topology`` (build + spectral report), ``gen-data`` (dataset
CSV), ``estimate`` (constants report), ``run`` (full experiment bundle),
``compare`` (three-way transient table), ``verify`` (numerical verification
suite), ``bounds`` (bound audit + transient predictions), ``plot`` (SVG from
summary CSVs).  Exit codes: 0 success, 1 verification or runtime failure,
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import harness
from .config import load_config
from .errors import ConfigInvalid, ConfigSyntax, DsgdLabError, NothingToPlot
from .metrics import read_summary_csv
from .objectives import (
    estimate_constants,
    gen_hetero_classification,
    gen_homo_from,
    write_constants_report,
    write_dataset_csv,
)
from .plotting import emit_plot
from .topology import spectral_gap, write_matrix_csv

_SUBCOMMANDS = (
    ("topology", "build the mixing matrix and print its spectral report"),
    ("gen-data", "generate the classification dataset and write it as CSV"),
    ("estimate", "estimate smoothness/noise constants and print the report"),
    ("run", "run all configured algorithm ensembles and write the bundle"),
    ("compare", "run the three-way comparison and print the transient table"),
    ("verify", "run the numerical verification suite"),
    ("bounds", "audit the convergence bounds against a fresh ensemble"),
    ("plot", "render the convergence SVG from previously written summaries"),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsgdlab",
        description="decentralized stochastic-gradient laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _SUBCOMMANDS:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override run.master_seed")
        p.add_argument("--runs", type=int, default=None, help="override run.runs")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _out_dir(cfg, args, required: bool = False):
    out = args.out if args.out else (cfg.run_out or None)
    if out is None and required:
        raise ConfigInvalid("run.out", "an output directory is required (run.out or --out)")
    if out is not None:
        os.makedirs(out, exist_ok=True)
    return out


def _cmd_topology(cfg, args) -> int:
    mixing = harness.build_mixing(cfg)
    report = spectral_gap(mixing)
    print(f"n = {mixing.n}")
    print(f"rho = {report.rho:.17g}")
    print(f"second_modulus = {report.second_modulus:.17g}")
    print(
        "residuals: "
        f"row {report.row_sum_residual:.3g}, col {report.col_sum_residual:.3g}, "
        f"asym {report.asymmetry:.3g}, neg {report.negativity:.3g}"
    )
    out = _out_dir(cfg, args)
    if out:
        path = os.path.join(out, "mixing.csv")
        write_matrix_csv(path, mixing)
        if not args.quiet:
            print(f"matrix written to {path}")
    return 0


def _cmd_gen_data(cfg, args) -> int:
    if cfg.objective_family != "sigmoid":
        raise ConfigInvalid("objective.family", "gen-data requires the sigmoid family")
    mixing = harness.build_mixing(cfg)
    dataset = gen_hetero_classification(
        n=mixing.n, d=cfg.objective_d, per_agent=cfg.objective_per_agent, seed=cfg.objective_seed
    )
    if cfg.objective_mode == "homogeneous":
        dataset = gen_homo_from(dataset)
    out = _out_dir(cfg, args, required=True)
    path = os.path.join(out, f"dataset_{cfg.objective_mode}.csv")
    write_dataset_csv(path, dataset)
    if not args.quiet:
        total = sum(x.shape[0] for x in dataset.xs)
        print(f"{dataset.n} agents, {total} samples, beta = {dataset.beta:.6g} -> {path}")
    return 0


def _cmd_estimate(cfg, args) -> int:
    seed = cfg.run_master_seed if args.seed is None else args.seed
    mixing = harness.build_mixing(cfg)
    suite = harness.build_suite(cfg, mixing.n, cfg.objective_mode)
    init = harness.build_init(cfg, suite.d)
    constants = estimate_constants(
        suite,
        probe_count=cfg.estimate_probe_count,
        draw_count=cfg.estimate_draw_count,
        radius=cfg.estimate_radius,
        seed=seed,
        center=init.mean_vector(suite.d),
    )
    for key, value in constants.as_dict().items():
        print(f"{key} = {value:.17g}")
    if not args.quiet:
        print(f"sigma sampled/cap = {constants.sigma_sampled:.6g} / {constants.sigma_cap:.6g}")
        print(f"varsigma sampled/cap = {constants.varsigma_sampled:.6g} / {constants.varsigma_cap:.6g}")
        print(
            f"varsigma_H sampled/cap = {constants.varsigma_H_sampled:.6g} / {constants.varsigma_H_cap:.6g}"
        )
    out = _out_dir(cfg, args)
    if out:
        write_constants_report(os.path.join(out, "constants.txt"), constants)
    return 0


def _cmd_run(cfg, args) -> int:
    out = _out_dir(cfg, args)
    harness.run_experiment(
        cfg, out_dir=out, master_seed=args.seed, runs=args.runs, quiet=args.quiet
    )
    return 0


def _cmd_compare(cfg, args) -> int:
    out = _out_dir(cfg, args)
    _, table = harness.compare_experiment(
        cfg, out_dir=out, master_seed=args.seed, runs=args.runs, quiet=args.quiet
    )
    print(table)
    return 0


def _cmd_verify(cfg, args) -> int:
    result = harness.verify_config(cfg, quiet=args.quiet)
    if args.quiet and not result.passed:
        print(result.render(), file=sys.stderr)
    return 0 if result.passed else 1


def _cmd_bounds(cfg, args) -> int:
    thm1, thm2, _ = harness.bounds_audit(
        cfg, master_seed=args.seed, runs=args.runs, quiet=args.quiet
    )
    return 0 if (thm1.passed and thm2.passed) else 1


def _cmd_plot(cfg, args) -> int:
    out = _out_dir(cfg, args, required=True)
    summaries = {}
    for plan in harness.resolve_labels(cfg):
        path = os.path.join(out, f"summary_{plan.label}.csv")
        if os.path.exists(path):
            summaries[plan.label] = read_summary_csv(path)
    if not summaries:
        raise NothingToPlot(f"no summary CSVs for the configured labels in {out}")
    target = os.path.join(out, "convergence.svg")
    emit_plot(summaries, target)
    if not args.quiet:
        print(f"plot written to {target}")
    return 0


_HANDLERS = {
    "topology": _cmd_topology,
    "gen-data": _cmd_gen_data,
    "estimate": _cmd_estimate,
    "run": _cmd_run,
    "compare": _cmd_compare,
    "verify": _cmd_verify,
    "bounds": _cmd_bounds,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConfigSyntax, ConfigInvalid) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](cfg, args)
    except (ConfigSyntax, ConfigInvalid, NothingToPlot, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DsgdLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
