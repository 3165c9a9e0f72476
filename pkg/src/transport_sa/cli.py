"""Command-line front end.

Commands: estimate (static delta grid), bounds (interval bounds), mc
(Monte Carlo sensitivity analysis), simulate (bias/coverage experiments),
version. One YAML config file describes the whole analysis; flags override
only the seed and the output path. Exit codes are stable API: 0 success,
2 configuration problems, 3 data problems, 4 fit failures.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

from . import __version__, report
from .config import RunConfig, load_config, resolve_config
from .data import StudyDataset, load_dataset
from .exceptions import ConfigError, DataError, FitError
from .nuisance import NuisanceSet, crossfit_predictions, fit_nuisance_set, make_folds
from .sensitivity import (
    AnalysisOptions,
    predicted_adherence_under_delta,
    run_bounds,
    run_mc,
    run_static_grid,
    summarize_mc,
)
from .simulate import run_dr_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FIT = 4


def _resolve_threads(flag: int | None) -> int:
    """--threads flag, else TRANSPORT_SA_THREADS, else available parallelism."""
    if flag is not None:
        if flag < 1:
            raise ConfigError(f"--threads must be at least 1, got {flag}")
        return flag
    env = os.environ.get("TRANSPORT_SA_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"TRANSPORT_SA_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError(f"TRANSPORT_SA_THREADS must be at least 1, got {n}")
        return n
    return os.cpu_count() or 1


def _load_inputs(cfg: RunConfig) -> tuple[StudyDataset, NuisanceSet]:
    if cfg.dataset is None:
        raise ConfigError("this command needs a dataset path in the config")
    if cfg.schema is None:
        raise ConfigError("this command needs a schema block in the config")
    ds = load_dataset(cfg.dataset, cfg.schema, delimiter=cfg.delimiter)
    if cfg.arms is not None and tuple(ds.arms) != cfg.arms:
        raise ConfigError(f"config lists arms {list(cfg.arms)} but the dataset has {list(ds.arms)}")
    if cfg.referent is not None and cfg.referent not in ds.arms:
        raise ConfigError(f"referent {cfg.referent!r} is not a dataset arm {list(ds.arms)}")
    if cfg.crossfit:
        folds = make_folds(ds, cfg.crossfit_k, cfg.seed)
        nu = crossfit_predictions(ds, folds, cfg.truncation, None)
    else:
        nu = fit_nuisance_set(ds, cfg.truncation)
    return ds, nu


def _options(cfg: RunConfig, threads: int) -> AnalysisOptions:
    return AnalysisOptions(
        estimator=cfg.estimator,
        engine=cfg.engine,
        level=cfg.level,
        bootstrap_b=cfg.bootstrap_b,
        seed=cfg.seed,
        threads=threads,
        referent=cfg.referent,
        include_reference=cfg.include_reference,
        include_trial=cfg.include_trial,
    )


def _outdir(cfg: RunConfig) -> str:
    if not cfg.output:
        raise ConfigError("an output directory is required (config 'output' or --output)")
    os.makedirs(cfg.output, exist_ok=True)
    return cfg.output


def _table_delimiter(cfg: RunConfig) -> str:
    # output tables reuse the input delimiter choice
    return cfg.delimiter


def cmd_estimate(cfg: RunConfig, threads: int) -> int:
    if cfg.delta_mode != "constants":
        raise ConfigError("estimate needs a delta block in constants mode")
    ds, nu = _load_inputs(cfg)
    opts = _options(cfg, threads)
    rows = run_static_grid(ds, nu, cfg.scenario, opts)
    adherence = []
    for const in cfg.scenario.grid:
        for arm in nu.arms:
            adherence.append((f"{float(const):g}", predicted_adherence_under_delta(nu, arm, float(const))))

    outdir = _outdir(cfg)
    if cfg.format == "structured":
        path = os.path.join(outdir, "estimate.jsonl")
        records = [report.run_record("estimate", cfg.seed), report.config_record(cfg.resolved),
                   report.nuisance_record(nu)]
        records += [report.estimate_record(r, cfg.level) for r in rows]
        records += [report.adherence_record(s, label) for label, s in adherence]
        report.write_structured(path, records)
        paths = [path]
    else:
        delim = _table_delimiter(cfg)
        est_path = os.path.join(outdir, "estimate.csv")
        report.write_delimited(est_path, report.ESTIMATE_COLUMNS,
                               (report.estimate_table_row(r, cfg.level) for r in rows),
                               cfg.resolved, delim)
        adh_path = os.path.join(outdir, "adherence.csv")
        report.write_delimited(adh_path, report.ADHERENCE_COLUMNS,
                               ((label, s.arm, s.mean, s.median, s.q1, s.q3) for label, s in adherence),
                               cfg.resolved, delim)
        nui_path = os.path.join(outdir, "nuisance.csv")
        nui_rec = report.nuisance_record(nu)
        nui_rows = []
        for model, info in nui_rec["models"].items():
            for col, beta in info["coefficients"].items():
                nui_rows.append((model, col, beta, info["converged"],
                                 info["iterations"], info["log_likelihood"]))
        report.write_delimited(
            nui_path,
            ("model", "term", "coefficient", "converged", "iterations", "log_likelihood"),
            nui_rows, cfg.resolved, delim,
            extra_comments=[f"k_hat={report.fmt(nu.k_hat)}",
                            f"truncation_events={nu.truncation_events}"],
        )
        paths = [est_path, adh_path, nui_path]

    for r in rows:
        print(f"{r.block:<10s} delta={r.delta_label:<10s} arm={r.arm:<6s} {r.estimand:<18s} "
              f"point={report.fmt(r.point)} se={report.fmt(r.se)} "
              f"ci=({report.fmt(r.lower)}, {report.fmt(r.upper)})")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_bounds(cfg: RunConfig, threads: int) -> int:
    if cfg.delta_mode != "ranges":
        raise ConfigError("bounds needs a delta block in ranges mode")
    ds, nu = _load_inputs(cfg)
    opts = _options(cfg, threads)
    res = run_bounds(ds, nu, cfg.scenario, opts)

    outdir = _outdir(cfg)
    if cfg.format == "structured":
        path = os.path.join(outdir, "bounds.jsonl")
        records = [report.run_record("bounds", cfg.seed), report.config_record(cfg.resolved),
                   report.nuisance_record(nu)]
        records += report.bounds_records(res)
        report.write_structured(path, records)
        paths = [path]
    else:
        path = os.path.join(outdir, "bounds.csv")
        report.write_delimited(path, report.BOUNDS_COLUMNS, report.bounds_table_rows(res),
                               cfg.resolved, _table_delimiter(cfg))
        paths = [path]

    for rec in report.bounds_records(res):
        print(f"bounds arm={rec['arm']:<8s} [{report.fmt(rec['lower'])}, {report.fmt(rec['upper'])}]")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_mc(cfg: RunConfig, threads: int) -> int:
    if cfg.delta_mode != "trapezoids":
        raise ConfigError("mc needs a delta block in trapezoids mode")
    ds, nu = _load_inputs(cfg)
    opts = _options(cfg, threads)
    mc = run_mc(ds, nu, cfg.scenario, opts)
    blocks = [("raw", summarize_mc(mc, se_augment=False)),
              ("augmented", summarize_mc(mc, se_augment=True))]

    outdir = _outdir(cfg)
    meta = {
        "record": "mc_meta",
        "draws": mc.n_draws,
        "n_valid": int(mc.valid.sum()),
        "n_invalid": mc.n_invalid,
        "seed": mc.seed,
        "referent": mc.referent,
        "constraint": blocks[0][1].constraint_label,
    }
    if cfg.format == "structured":
        path = os.path.join(outdir, "mc.jsonl")
        records = [report.run_record("mc", cfg.seed), report.config_record(cfg.resolved),
                   report.nuisance_record(nu), meta]
        records += report.mc_summary_records(blocks)
        records += list(report.mc_draw_records(mc))
        report.write_structured(path, records)
        paths = [path]
    else:
        delim = _table_delimiter(cfg)
        sum_path = os.path.join(outdir, "mc_summary.csv")
        report.write_delimited(sum_path, report.MC_SUMMARY_COLUMNS,
                               report.mc_summary_table_rows(blocks), cfg.resolved, delim,
                               extra_comments=[f"draws={mc.n_draws}",
                                               f"n_valid={meta['n_valid']}",
                                               f"constraint={meta['constraint']}"])
        draw_path = os.path.join(outdir, "mc_draws.csv")
        report.write_delimited(draw_path, report.mc_draw_columns(mc), report.mc_draw_rows(mc),
                               cfg.resolved, delim)
        paths = [sum_path, draw_path]

    for rec in report.mc_summary_records(blocks):
        print(f"mc {rec['block']:<22s} {rec['quantity']:<8s} median={report.fmt(rec['median'])} "
              f"interval=({report.fmt(rec['lower'])}, {report.fmt(rec['upper'])}) "
              f"draws={rec['draws_used']}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, threads: int) -> int:
    if cfg.simulate is None:
        raise ConfigError("simulate needs a simulate block in the config")
    sim = cfg.simulate
    rows = run_dr_experiment(
        sim.dgp, sim.configs, sim.sizes, sim.reps, sim.deltas,
        arm=sim.arm, level=cfg.level, seed=cfg.seed, truncation=cfg.truncation,
    )

    outdir = _outdir(cfg)
    if cfg.format == "structured":
        path = os.path.join(outdir, "simulate.jsonl")
        records = [report.run_record("simulate", cfg.seed), report.config_record(cfg.resolved)]
        records += [report.simulate_record(r) for r in rows]
        report.write_structured(path, records)
    else:
        path = os.path.join(outdir, "simulate.csv")
        report.write_delimited(path, report.SIMULATE_COLUMNS,
                               (report.simulate_table_row(r) for r in rows),
                               cfg.resolved, _table_delimiter(cfg))

    for r in rows:
        print(f"sim {r.config:<10s} n={r.size:<7d} {r.estimator:<8s} arm={r.arm} "
              f"delta={report.fmt(r.delta)} bias={report.fmt(r.mean_bias)} "
              f"mcse={report.fmt(r.mcse_bias)} rmse={report.fmt(r.rmse)} "
              f"coverage={report.fmt(r.coverage) if r.coverage is not None else 'n/a'}")
    print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "estimate": cmd_estimate,
    "bounds": cmd_bounds,
    "mc": cmd_mc,
    "simulate": cmd_simulate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transport-sa",
        description="Transport trial estimates to a target population under "
                    "adherence-ratio sensitivity parameters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("estimate", "point estimates over a static delta grid"),
        ("bounds", "estimate bounds over per-arm delta ranges"),
        ("mc", "Monte Carlo sensitivity analysis over trapezoidal delta priors"),
        ("simulate", "bias/coverage experiments against the exact oracle"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output", default=None, help="override the config output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="parallelism bound (default: TRANSPORT_SA_THREADS or all cores)")
    sub.add_parser("version", help="print the tool version")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "version":
        print(f"transport-sa {__version__}")
        return EXIT_OK
    try:
        threads = _resolve_threads(args.threads)
        cfg = resolve_config(load_config(args.config),
                             seed_override=args.seed, output_override=args.output)
        return _COMMANDS[args.command](cfg, threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
