"""Report emission: structured line-delimited records or delimited tables.

Every report embeds the fully resolved configuration so an output file is
reproducible from its own header plus the input data. Numbers are written
with 10 significant digits. The structured format is one JSON record per
line with a ``schema_version`` field; additive changes bump the version.
The wall-clock timestamp appears only in the run record, so two runs of
the same config differ in at most that one line.
"""

from __future__ import annotations

import csv
import json
import time
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .nuisance import NuisanceSet
from .sensitivity import (
    AdherenceSummary,
    BoundsResult,
    GridRow,
    McResult,
    McSummary,
)
from .simulate import ExperimentRow

SCHEMA_VERSION = 1


def sig10(x: float) -> float:
    """Round a float to 10 significant digits (the output precision contract)."""
    if x != x or x in (float("inf"), float("-inf")):
        return x
    return float(f"{x:.10g}")


def fmt(x: Any) -> str:
    """Render one value for delimited output: floats at 10 significant digits."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    if x is None:
        return ""
    return str(x)


def _jsonable(x: Any) -> Any:
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.floating, float)):
        return sig10(float(x))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x]
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def dump_record(record: Mapping[str, Any]) -> str:
    return json.dumps(_jsonable(record), sort_keys=True, separators=(",", ":"))


def write_structured(path: str, records: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dump_record(rec) + "\n")


def write_delimited(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                    config: Mapping[str, Any], delimiter: str = ",",
                    extra_comments: Sequence[str] = ()) -> None:
    """Delimited table with the resolved config embedded as '#' comments."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# transport-sa {__version__} schema_version={SCHEMA_VERSION}\n")
        fh.write("# config: " + dump_record(config) + "\n")
        for line in extra_comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def run_record(command: str, seed: int, timestamp: str | None = None) -> dict:
    if timestamp is None:
        timestamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return {
        "record": "run",
        "schema_version": SCHEMA_VERSION,
        "tool": "transport-sa",
        "version": __version__,
        "command": command,
        "seed": seed,
        "timestamp": timestamp,
    }


def config_record(resolved: Mapping[str, Any]) -> dict:
    return {"record": "config", "config": dict(resolved)}


def nuisance_record(nu: NuisanceSet) -> dict:
    models = {}
    for name, model in sorted(nu.models.items()):
        models[name] = {
            "coefficients": {col: sig10(float(b)) for col, b in zip(model.columns, model.coefficients)},
            "converged": bool(model.converged),
            "iterations": int(model.iterations),
            "log_likelihood": sig10(float(model.log_likelihood)),
        }
    rec = {
        "record": "nuisance",
        "k_hat": nu.k_hat,
        "truncation": list(nu.truncation),
        "truncation_events": nu.truncation_events,
        "crossfit": nu.crossfit,
        "models": models,
    }
    if nu.crossfit and nu.folds is not None:
        rec["folds"] = {"k": nu.folds.k, "seed": nu.folds.seed,
                        "effective_k": dict(nu.folds.effective_k)}
    return rec


ESTIMATE_COLUMNS = ("block", "delta", "arm", "estimand", "point", "se",
                    "lower", "upper", "level", "method", "outside_unit_interval")


def estimate_record(row: GridRow, level: float) -> dict:
    return {
        "record": "estimate",
        "block": row.block,
        "delta_label": row.delta_label,
        "arm": row.arm,
        "estimand": row.estimand,
        "point": row.point,
        "variance": row.variance,
        "se": row.se,
        "lower": row.lower,
        "upper": row.upper,
        "level": level,
        "method": row.method,
        "outside_unit_interval": row.outside_unit_interval,
        "delta": row.delta,
    }


def estimate_table_row(row: GridRow, level: float) -> tuple:
    return (row.block, row.delta_label, row.arm, row.estimand, row.point, row.se,
            row.lower, row.upper, level, row.method, row.outside_unit_interval)


ADHERENCE_COLUMNS = ("delta", "arm", "mean", "median", "q1", "q3")


def adherence_record(s: AdherenceSummary, label: str) -> dict:
    return {
        "record": "adherence",
        "delta_label": label,
        "arm": s.arm,
        "delta": s.delta,
        "mean": s.mean,
        "median": s.median,
        "q1": s.q1,
        "q3": s.q3,
    }


BOUNDS_COLUMNS = ("arm", "delta_lo", "delta_hi", "lower", "upper",
                  "delta_at_lower", "delta_at_upper")


def bounds_records(res: BoundsResult) -> list[dict]:
    recs = []
    for arm in sorted(res.per_arm):
        b = res.per_arm[arm]
        recs.append({
            "record": "bounds",
            "arm": b.arm,
            "estimand": "psi_OS" if res.estimator == "onestep" else "psi_G",
            "delta_lo": b.delta_lo,
            "delta_hi": b.delta_hi,
            "lower": b.lower,
            "upper": b.upper,
            "delta_at_lower": b.delta_at_lower,
            "delta_at_upper": b.delta_at_upper,
        })
    rd = res.rd
    recs.append({
        "record": "bounds",
        "arm": rd.arms,
        "estimand": ("psi_OS" if res.estimator == "onestep" else "psi_G") + ":rd",
        "delta_lo": None,
        "delta_hi": None,
        "lower": rd.lower,
        "upper": rd.upper,
        "delta_at_lower": list(rd.deltas_at_lower),
        "delta_at_upper": list(rd.deltas_at_upper),
    })
    return recs


def bounds_table_rows(res: BoundsResult) -> list[tuple]:
    rows = []
    for rec in bounds_records(res):
        at_lo, at_hi = rec["delta_at_lower"], rec["delta_at_upper"]
        if isinstance(at_lo, list):
            at_lo = "/".join(fmt(v) for v in at_lo)
            at_hi = "/".join(fmt(v) for v in at_hi)
        rows.append((rec["arm"], rec["delta_lo"], rec["delta_hi"],
                     rec["lower"], rec["upper"], at_lo, at_hi))
    return rows


DRAW_COLUMNS_BASE = ("draw", "valid")


def mc_draw_columns(mc: McResult) -> tuple[str, ...]:
    cols = list(DRAW_COLUMNS_BASE)
    for arm in sorted(mc.delta):
        cols += [f"delta[{arm}]", f"psi[{arm}]", f"se[{arm}]"]
    cols += ["rd", "se_rd"]
    return tuple(cols)


def mc_draw_rows(mc: McResult) -> Iterable[tuple]:
    arms = sorted(mc.delta)
    for i in range(mc.n_draws):
        row: list[Any] = [i, bool(mc.valid[i])]
        for arm in arms:
            row += [mc.delta[arm][i], mc.psi[arm][i], mc.se[arm][i]]
        row += [mc.rd[i], mc.se_rd[i]]
        yield tuple(row)


def mc_draw_records(mc: McResult) -> Iterable[dict]:
    arms = sorted(mc.delta)
    for i in range(mc.n_draws):
        rec: dict[str, Any] = {"record": "mc_draw", "draw": i, "valid": bool(mc.valid[i])}
        for arm in arms:
            rec[f"delta[{arm}]"] = mc.delta[arm][i]
            rec[f"psi[{arm}]"] = mc.psi[arm][i]
            rec[f"se[{arm}]"] = mc.se[arm][i]
        rec["rd"] = mc.rd[i]
        rec["se_rd"] = mc.se_rd[i]
        yield rec


MC_SUMMARY_COLUMNS = ("block", "quantity", "median", "lower", "upper",
                      "draws_used", "se_augment")


def mc_summary_records(blocks: Sequence[tuple[str, McSummary]]) -> list[dict]:
    recs = []
    for label, summary in blocks:
        groups = [("all", summary.overall, summary.n_valid)]
        if summary.constrained is not None:
            groups.append(("constrained", summary.constrained, summary.subset_size))
        for scope, stats, used in groups:
            for q in summary.quantities:
                med, lo, hi = stats[q]
                recs.append({
                    "record": "mc_summary",
                    "block": f"{label}/{scope}" if scope == "constrained" else label,
                    "scope": scope,
                    "quantity": q,
                    "median": med,
                    "lower": lo,
                    "upper": hi,
                    "draws_used": used,
                    "se_augment": summary.se_augment,
                    "constraint": summary.constraint_label if scope == "constrained" else None,
                })
    return recs


def mc_summary_table_rows(blocks: Sequence[tuple[str, McSummary]]) -> list[tuple]:
    rows = []
    for rec in mc_summary_records(blocks):
        rows.append((rec["block"], rec["quantity"], rec["median"], rec["lower"],
                     rec["upper"], rec["draws_used"], rec["se_augment"]))
    return rows


SIMULATE_COLUMNS = ("config", "size", "n1", "n0", "estimator", "arm", "delta",
                    "oracle", "reps", "failures", "mean_bias", "mcse_bias",
                    "rmse", "coverage")


def simulate_record(row: ExperimentRow) -> dict:
    return {
        "record": "experiment",
        "config": row.config,
        "size": row.size,
        "n1": row.n1,
        "n0": row.n0,
        "estimator": row.estimator,
        "arm": row.arm,
        "delta": row.delta,
        "oracle": row.oracle,
        "reps": row.reps,
        "failures": row.failures,
        "mean_bias": row.mean_bias,
        "mcse_bias": row.mcse_bias,
        "rmse": row.rmse,
        "coverage": row.coverage,
    }


def simulate_table_row(row: ExperimentRow) -> tuple:
    return (row.config, row.size, row.n1, row.n0, row.estimator, row.arm,
            row.delta, row.oracle, row.reps, row.failures, row.mean_bias,
            row.mcse_bias, row.rmse, row.coverage)
