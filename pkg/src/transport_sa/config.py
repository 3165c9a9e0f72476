"""Run configuration: a single YAML file describing an entire analysis.

One self-describing config drives every command. Flags override only the
seed and the output path, so a report's embedded config plus its seed is
enough to reproduce it. Thread count is an execution knob, not analysis
configuration, and never appears here.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Mapping

import yaml

from .data import Covariate, CovariateSchema
from .exceptions import ConfigError, DataError
from .sensitivity import DeltaScenario, TrapezoidDist
from .simulate import MisspecConfig, DgpSpec, toy_dgp, toy_dgp_tilted

_TOP_KEYS = {
    "dataset", "delimiter", "schema", "arms", "referent", "estimator",
    "engine", "bootstrap_b", "crossfit", "crossfit_k", "truncation",
    "seed", "level", "output", "format", "include_trial",
    "include_reference", "delta", "simulate",
}
_DELTA_KEYS = {"constants", "ranges", "trapezoids", "draws", "constraint", "max"}
_DELTA_MODES = ("constants", "ranges", "trapezoids")
_SIM_KEYS = {"dgp", "sizes", "reps", "deltas", "arm", "configs"}
_DGP_KEYS = {
    "covariates", "p_trial", "p_target", "arms", "assignment", "adherence",
    "outcome_adherent", "outcome_nonadherent", "n1", "n0", "seed",
}

DEFAULTS: dict[str, Any] = {
    "delimiter": ",",
    "estimator": "onestep",
    "engine": "eic",
    "bootstrap_b": 500,
    "crossfit": False,
    "crossfit_k": 30,
    "truncation": [0.001, 0.999],
    "seed": 0,
    "level": 0.95,
    "format": "structured",
    "include_trial": True,
    "include_reference": True,
}


@dataclass(frozen=True)
class SimulateConfig:
    dgp: DgpSpec
    sizes: tuple[int, ...]
    reps: int
    deltas: tuple[float, ...]
    arm: str | None
    configs: tuple[MisspecConfig, ...]


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved analysis configuration.

    ``resolved`` is the JSON-ready form (defaults filled in) that reports
    embed verbatim.
    """

    resolved: Mapping[str, Any]
    dataset: str | None
    delimiter: str
    schema: CovariateSchema | None
    arms: tuple[str, ...] | None
    referent: str | None
    estimator: str
    engine: str
    bootstrap_b: int
    crossfit: bool
    crossfit_k: int
    truncation: tuple[float, float]
    seed: int
    level: float
    output: str | None
    format: str
    include_trial: bool
    include_reference: bool
    delta_mode: str | None
    scenario: DeltaScenario | None
    simulate: SimulateConfig | None


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _as_int(raw: Mapping, key: str, minimum: int | None = None) -> int:
    v = raw[key]
    _require(isinstance(v, int) and not isinstance(v, bool), f"{key} must be an integer, got {v!r}")
    if minimum is not None:
        _require(v >= minimum, f"{key} must be at least {minimum}, got {v}")
    return v


def _as_number(v: Any, what: str) -> float:
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), f"{what} must be a number, got {v!r}")
    return float(v)


def _parse_schema(block: Any) -> CovariateSchema:
    _require(isinstance(block, list) and block, "schema must be a non-empty list of covariates")
    covs = []
    for i, entry in enumerate(block):
        _require(isinstance(entry, Mapping), f"schema entry {i} must be a mapping")
        extra = set(entry) - {"name", "kind", "levels"}
        _require(not extra, f"schema entry {i} has unknown keys {sorted(extra)}")
        _require("name" in entry and "kind" in entry, f"schema entry {i} needs name and kind")
        levels = entry.get("levels")
        if levels is not None:
            _require(isinstance(levels, list), f"schema entry {i}: levels must be a list")
            levels = tuple(str(v) for v in levels)
        try:
            covs.append(Covariate(str(entry["name"]), str(entry["kind"]), levels))
        except (ValueError, DataError) as exc:
            raise ConfigError(f"schema entry {i}: {exc}") from exc
    try:
        return CovariateSchema(tuple(covs))
    except (ValueError, DataError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_constraint(raw: Any) -> tuple[str, str] | None:
    if raw is None:
        return None
    _require(isinstance(raw, str), f"constraint must be a string like 'armA <= armB', got {raw!r}")
    parts = raw.split("<=")
    _require(len(parts) == 2 and parts[0].strip() and parts[1].strip(),
             f"constraint must have the form 'armA <= armB', got {raw!r}")
    return (parts[0].strip(), parts[1].strip())


def _parse_delta(block: Any, seed: int) -> tuple[str, DeltaScenario]:
    _require(isinstance(block, Mapping), "delta must be a mapping")
    extra = set(block) - _DELTA_KEYS
    _require(not extra, f"delta block has unknown keys {sorted(extra)}")
    modes = [m for m in _DELTA_MODES if m in block]
    _require(len(modes) == 1,
             f"delta block must contain exactly one of {list(_DELTA_MODES)}, found {modes or 'none'}")
    mode = modes[0]
    delta_max = _as_number(block.get("max", 1.0), "delta.max")
    constraint = _parse_constraint(block.get("constraint"))

    if mode == "constants":
        vals = block["constants"]
        _require(isinstance(vals, list) and vals, "delta.constants must be a non-empty list")
        grid = tuple(_as_number(v, "delta constant") for v in vals)
        return mode, DeltaScenario(grid=grid, seed=seed, constraint=constraint, delta_max=delta_max)

    per_arm_raw = block[mode]
    _require(isinstance(per_arm_raw, Mapping) and per_arm_raw,
             f"delta.{mode} must map arm labels to values")
    per_arm: dict[str, object] = {}
    for arm, v in per_arm_raw.items():
        arm = str(arm)
        if mode == "ranges":
            _require(isinstance(v, list) and len(v) == 2,
                     f"delta.ranges[{arm}] must be a [low, high] pair")
            per_arm[arm] = (_as_number(v[0], "range low"), _as_number(v[1], "range high"))
        else:
            _require(isinstance(v, list) and len(v) == 4,
                     f"delta.trapezoids[{arm}] must be [min, lower mode, upper mode, max]")
            per_arm[arm] = TrapezoidDist(*(_as_number(x, "trapezoid corner") for x in v))
    draws = block.get("draws", 10000)
    _require(isinstance(draws, int) and not isinstance(draws, bool), "delta.draws must be an integer")
    return mode, DeltaScenario(per_arm=per_arm, draws=draws, seed=seed,
                               constraint=constraint, delta_max=delta_max)


def _parse_dgp(block: Any) -> DgpSpec:
    if block == "toy":
        return toy_dgp()
    if block == "toy-tilted":
        return toy_dgp_tilted()
    _require(isinstance(block, Mapping), f"dgp must be 'toy', 'toy-tilted', or a mapping, got {block!r}")
    extra = set(block) - _DGP_KEYS
    _require(not extra, f"dgp block has unknown keys {sorted(extra)}")
    missing = _DGP_KEYS - {"seed"} - set(block)
    _require(not missing, f"dgp block is missing keys {sorted(missing)}")
    schema = _parse_schema(block["covariates"])

    def table(key: str) -> dict[str, list[float]]:
        v = block[key]
        _require(isinstance(v, Mapping), f"dgp.{key} must map arm labels to per-cell probabilities")
        return {str(a): [_as_number(x, f"dgp.{key}") for x in vals] for a, vals in v.items()}

    try:
        return DgpSpec(
            schema=schema,
            p_trial=[_as_number(x, "dgp.p_trial") for x in block["p_trial"]],
            p_target=[_as_number(x, "dgp.p_target") for x in block["p_target"]],
            arms=tuple(str(a) for a in block["arms"]),
            assignment=table("assignment"),
            adherence=table("adherence"),
            outcome_adherent=table("outcome_adherent"),
            outcome_nonadherent=table("outcome_nonadherent"),
            n1=_as_int(block, "n1", minimum=1),
            n0=_as_int(block, "n0", minimum=1),
            seed=block.get("seed", 0),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid dgp block: {exc}") from exc


def _parse_misspec(raw: Any) -> MisspecConfig:
    _require(isinstance(raw, str) and raw, f"misspec config must be a string label, got {raw!r}")
    if raw == "all":
        return MisspecConfig("all", frozenset({"q", "m", "g", "h"}))
    parts = [p.strip().lower() for p in raw.split("+")]
    bad = [p for p in parts if p not in {"q", "m", "g", "h"}]
    _require(not bad, f"misspec config {raw!r} names unknown nuisances {bad}; use Q, m, g, h")
    return MisspecConfig(raw, frozenset(parts))


def _parse_simulate(block: Any) -> SimulateConfig:
    _require(isinstance(block, Mapping), "simulate must be a mapping")
    extra = set(block) - _SIM_KEYS
    _require(not extra, f"simulate block has unknown keys {sorted(extra)}")
    _require("dgp" in block, "simulate block needs a dgp entry")
    dgp = _parse_dgp(block["dgp"])
    sizes_raw = block.get("sizes", [dgp.n1 + dgp.n0])
    _require(isinstance(sizes_raw, list) and sizes_raw, "simulate.sizes must be a non-empty list")
    sizes = tuple(int(_as_number(s, "simulate size")) for s in sizes_raw)
    _require(all(s >= 4 for s in sizes), "simulate sizes must be at least 4")
    _require("reps" in block, "simulate block needs reps")
    reps = block["reps"]
    _require(isinstance(reps, int) and not isinstance(reps, bool) and reps >= 1,
             f"simulate.reps must be a positive integer, got {reps!r}")
    deltas_raw = block.get("deltas", [1.0])
    _require(isinstance(deltas_raw, list) and deltas_raw, "simulate.deltas must be a non-empty list")
    deltas = tuple(_as_number(d, "simulate delta") for d in deltas_raw)
    arm = block.get("arm")
    if arm is not None:
        arm = str(arm)
        _require(arm in dgp.arms, f"simulate.arm {arm!r} is not a dgp arm {list(dgp.arms)}")
    configs = tuple(_parse_misspec(c) for c in block.get("configs", ["all"]))
    return SimulateConfig(dgp=dgp, sizes=sizes, reps=reps, deltas=deltas, arm=arm, configs=configs)


def load_config(path: str) -> dict:
    """Read and parse the YAML config file into a plain mapping."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    return raw


def resolve_config(
    raw: Mapping[str, Any],
    *,
    seed_override: int | None = None,
    output_override: str | None = None,
) -> RunConfig:
    """Validate the raw mapping, fill defaults, and build typed pieces.

    Command-line overrides apply only to the seed and the output path; the
    override values land in the resolved snapshot so reports stay
    self-describing.
    """
    extra = set(raw) - _TOP_KEYS
    _require(not extra, f"unknown config keys {sorted(extra)}")
    merged: dict[str, Any] = {**DEFAULTS, **dict(raw)}
    if seed_override is not None:
        merged["seed"] = seed_override
    if output_override is not None:
        merged["output"] = output_override

    seed = merged["seed"]
    _require(isinstance(seed, int) and not isinstance(seed, bool), f"seed must be an integer, got {seed!r}")
    estimator = merged["estimator"]
    _require(estimator in ("gcomp", "onestep"), f"estimator must be 'gcomp' or 'onestep', got {estimator!r}")
    engine = merged["engine"]
    _require(engine in ("eic", "bootstrap", "sandwich"),
             f"engine must be 'eic', 'bootstrap', or 'sandwich', got {engine!r}")
    bootstrap_b = _as_int(merged, "bootstrap_b", minimum=1)
    crossfit = merged["crossfit"]
    _require(isinstance(crossfit, bool), f"crossfit must be true or false, got {crossfit!r}")
    crossfit_k = _as_int(merged, "crossfit_k", minimum=2)
    trunc_raw = merged["truncation"]
    _require(isinstance(trunc_raw, list) and len(trunc_raw) == 2,
             "truncation must be a [low, high] pair")
    truncation = (_as_number(trunc_raw[0], "truncation low"), _as_number(trunc_raw[1], "truncation high"))
    _require(0.0 < truncation[0] < truncation[1] < 1.0,
             "truncation bounds must satisfy 0 < low < high < 1")
    level = _as_number(merged["level"], "level")
    _require(0.0 < level < 1.0, f"level must be in (0, 1), got {level}")
    fmt = merged["format"]
    _require(fmt in ("structured", "delimited"), f"format must be 'structured' or 'delimited', got {fmt!r}")
    delimiter = merged["delimiter"]
    _require(delimiter in (",", "tab"), f"delimiter must be ',' or 'tab', got {delimiter!r}")
    for key in ("include_trial", "include_reference"):
        _require(isinstance(merged[key], bool), f"{key} must be true or false")

    dataset = merged.get("dataset")
    if dataset is not None:
        _require(isinstance(dataset, str) and dataset, f"dataset must be a file path, got {dataset!r}")
    schema = _parse_schema(merged["schema"]) if "schema" in merged else None
    arms = None
    if merged.get("arms") is not None:
        arms_raw = merged["arms"]
        _require(isinstance(arms_raw, list) and len(arms_raw) == 2, "arms must list exactly two labels")
        arms = tuple(sorted(str(a) for a in arms_raw))
        _require(len(set(arms)) == 2, "arms must be two distinct labels")
    referent = merged.get("referent")
    if referent is not None:
        referent = str(referent)
        if arms is not None:
            _require(referent in arms, f"referent {referent!r} is not one of the arms {list(arms)}")

    delta_mode = None
    scenario = None
    if merged.get("delta") is not None:
        delta_mode, scenario = _parse_delta(merged["delta"], seed)
    simulate = _parse_simulate(merged["simulate"]) if merged.get("simulate") is not None else None

    resolved = {k: merged[k] for k in sorted(merged) if merged[k] is not None or k in DEFAULTS}
    return RunConfig(
        resolved=resolved,
        dataset=dataset,
        delimiter="\t" if delimiter == "tab" else delimiter,
        schema=schema,
        arms=arms,
        referent=referent,
        estimator=estimator,
        engine=engine,
        bootstrap_b=bootstrap_b,
        crossfit=crossfit,
        crossfit_k=crossfit_k,
        truncation=truncation,
        seed=seed,
        level=level,
        output=merged.get("output"),
        format=fmt,
        include_trial=merged["include_trial"],
        include_reference=merged["include_reference"],
        delta_mode=delta_mode,
        scenario=scenario,
        simulate=simulate,
    )
