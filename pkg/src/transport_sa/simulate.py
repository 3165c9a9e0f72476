"""Synthetic data generation with a closed-form oracle.

A :class:`DgpSpec` describes a data-generating process over a finite
covariate grid: cell probabilities for the trial and target samples, and
per-cell assignment, adherence, and outcome probabilities for each arm.
Because the grid is finite, the transported mean under any adherence ratio
has an exact enumeration (:func:`oracle_psi`), which anchors the estimator
verification suite.

:func:`run_dr_experiment` repeatedly generates data, fits deliberately
misspecified nuisance subsets, and tabulates bias/coverage of the plug-in
and one-step estimators against the oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .data import Covariate, CovariateSchema, StudyDataset
from .estimators import gcomp_psi, onestep_psi
from .exceptions import ConfigError, FitError
from .inference import eic_variance, wald_ci
from .nuisance import NUISANCE_KEYS, fit_nuisance_set


def _grid_levels(schema: CovariateSchema) -> list[tuple[str, ...]]:
    per_cov = []
    for c in schema:
        if c.kind == "binary":
            per_cov.append(("0", "1"))
        elif c.kind == "categorical":
            per_cov.append(c.levels)
        else:
            raise ConfigError(f"covariate {c.name!r} is continuous; the DGP grid must be discrete")
    return [tuple(cell) for cell in itertools.product(*per_cov)]


def _check_probs(name: str, arr: np.ndarray, ncells: int, open_interval: bool = False) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (ncells,):
        raise ConfigError(f"{name} must have one value per covariate cell ({ncells}), got shape {arr.shape}")
    lo_ok = (arr > 0).all() if open_interval else (arr >= 0).all()
    hi_ok = (arr < 1).all() if open_interval else (arr <= 1).all()
    if not (np.isfinite(arr).all() and lo_ok and hi_ok):
        raise ConfigError(f"{name} values must be probabilities" + (" strictly inside (0, 1)" if open_interval else ""))
    return arr


@dataclass(frozen=True)
class DgpSpec:
    """A discrete-grid data-generating process for one two-arm trial plus target.

    Probability arrays are indexed by covariate cell, in the row-major order
    of the cartesian product of the covariate levels (binary covariates use
    levels 0, 1). ``assignment`` may name one arm (the other becomes its
    complement) or both arms (which must sum to one per cell).
    """

    schema: CovariateSchema
    p_trial: np.ndarray
    p_target: np.ndarray
    arms: tuple[str, str]
    assignment: Mapping[str, np.ndarray]
    adherence: Mapping[str, np.ndarray]
    outcome_adherent: Mapping[str, np.ndarray]
    outcome_nonadherent: Mapping[str, np.ndarray]
    n1: int
    n0: int
    seed: int = 0

    def __post_init__(self) -> None:
        cells = _grid_levels(self.schema)
        k = len(cells)
        arms = tuple(sorted(set(str(a) for a in self.arms)))
        if len(arms) != 2:
            raise ConfigError(f"exactly two distinct arms required, got {self.arms!r}")
        object.__setattr__(self, "arms", arms)
        for name in ("p_trial", "p_target"):
            arr = _check_probs(name, getattr(self, name), k)
            if abs(arr.sum() - 1.0) > 1e-9:
                raise ConfigError(f"{name} must sum to 1, got {arr.sum()!r}")
            object.__setattr__(self, name, arr)
        missing = set(self.assignment) - set(arms)
        if missing:
            raise ConfigError(f"assignment names unknown arms {sorted(missing)}")
        if len(self.assignment) == 2:
            g = {a: _check_probs(f"assignment[{a}]", self.assignment[a], k, True) for a in arms}
            if np.max(np.abs(g[arms[0]] + g[arms[1]] - 1.0)) > 1e-9:
                raise ConfigError("assignment probabilities must sum to 1 across arms")
        elif len(self.assignment) == 1:
            (given,) = self.assignment
            pg = _check_probs(f"assignment[{given}]", self.assignment[given], k, True)
            other = arms[0] if given == arms[1] else arms[1]
            g = {given: pg, other: 1.0 - pg}
        else:
            raise ConfigError("assignment must cover one or both arms")
        object.__setattr__(self, "assignment", g)
        for field_name, open_iv in (
            ("adherence", True),
            ("outcome_adherent", False),
            ("outcome_nonadherent", False),
        ):
            table = getattr(self, field_name)
            if set(table) != set(arms):
                raise ConfigError(f"{field_name} must cover both arms {list(arms)}")
            checked = {a: _check_probs(f"{field_name}[{a}]", table[a], k, open_iv) for a in arms}
            object.__setattr__(self, field_name, checked)
        if self.n1 < 1 or self.n0 < 1:
            raise ConfigError("n1 and n0 must be at least 1")

    @property
    def cells(self) -> list[tuple[str, ...]]:
        return _grid_levels(self.schema)


def toy_dgp(n1: int = 1000, n0: int = 1000, seed: int = 0) -> DgpSpec:
    """Single binary covariate, randomized assignment; the verification workhorse.

    Adherence and outcome probabilities differ by covariate level and by
    arm, and the covariate distribution differs between trial and target,
    so every nuisance except assignment genuinely depends on the covariate.
    """
    schema = CovariateSchema((Covariate("w", "binary"),))
    return DgpSpec(
        schema=schema,
        p_trial=np.array([0.6, 0.4]),
        p_target=np.array([0.5, 0.5]),
        arms=("0", "1"),
        assignment={"1": np.array([0.5, 0.5])},
        adherence={"1": np.array([0.8, 0.6]), "0": np.array([0.95, 0.9])},
        outcome_adherent={"1": np.array([0.3, 0.5]), "0": np.array([0.2, 0.4])},
        outcome_nonadherent={"1": np.array([0.7, 0.9]), "0": np.array([0.6, 0.8])},
        n1=n1,
        n0=n0,
        seed=seed,
    )


def toy_dgp_tilted(n1: int = 1000, n0: int = 1000, seed: int = 0) -> DgpSpec:
    """The toy process with covariate-dependent assignment.

    With assignment depending on the covariate, an intercept-only
    assignment fit is genuinely misspecified, which sharpens the
    correct-subset robustness experiments.
    """
    spec = toy_dgp(n1, n0, seed)
    return replace(spec, assignment={"1": np.array([0.4, 0.6])})


def oracle_psi(spec: DgpSpec, arm: str, delta) -> float:
    """Exact transported mean under the adherence ratio ``delta``.

    ``delta`` may be a scalar or a per-cell array. Pure enumeration over
    the target covariate distribution; no sampling is involved.
    """
    if arm not in spec.arms:
        raise ConfigError(f"unknown arm {arm!r}; DGP arms are {list(spec.arms)}")
    k = len(spec.cells)
    d = np.asarray(delta, dtype=float) * np.ones(k)
    m = spec.adherence[arm]
    target_adh = m * d
    if (target_adh < 0).any() or (target_adh > 1).any():
        raise ConfigError("delta pushes target adherence outside [0, 1] on some cell")
    q1 = spec.outcome_adherent[arm]
    q0 = spec.outcome_nonadherent[arm]
    return float(np.sum(spec.p_target * (q1 * target_adh + q0 * (1.0 - target_adh))))


def generate_data(
    spec: DgpSpec,
    n1: int | None = None,
    n0: int | None = None,
    seed=None,
) -> StudyDataset:
    """Draw one dataset from the process; sizes and seed can be overridden.

    Trial rows are drawn first (covariate cell, then arm, adherence,
    outcome), then target rows, from a single seeded generator, so a given
    (spec, sizes, seed) triple always produces the same dataset.
    """
    n1 = spec.n1 if n1 is None else int(n1)
    n0 = spec.n0 if n0 is None else int(n0)
    if n1 < 1 or n0 < 1:
        raise ConfigError("need at least one trial row and one target row")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    k = len(spec.cells)
    cell1 = rng.choice(k, size=n1, p=spec.p_trial)
    pos = spec.arms[1]
    u_arm = rng.random(n1)
    is_pos = u_arm < spec.assignment[pos][cell1]
    a = np.where(is_pos, pos, spec.arms[0]).astype(object)
    m = np.where(is_pos, spec.adherence[pos][cell1], spec.adherence[spec.arms[0]][cell1])
    z = (rng.random(n1) < m).astype(float)
    q1 = np.where(is_pos, spec.outcome_adherent[pos][cell1], spec.outcome_adherent[spec.arms[0]][cell1])
    q0 = np.where(is_pos, spec.outcome_nonadherent[pos][cell1], spec.outcome_nonadherent[spec.arms[0]][cell1])
    py = np.where(z == 1.0, q1, q0)
    y = (rng.random(n1) < py).astype(float)
    cell0 = rng.choice(k, size=n0, p=spec.p_target)

    cells = np.array(spec.cells, dtype=object)
    cov: dict[str, np.ndarray] = {}
    for j, c in enumerate(spec.schema):
        lv1 = cells[cell1, j]
        lv0 = cells[cell0, j]
        both = np.concatenate([lv1, lv0])
        cov[c.name] = both if c.kind == "categorical" else both.astype(float)
    s = np.concatenate([np.ones(n1, dtype=np.int8), np.zeros(n0, dtype=np.int8)])
    a_all = np.concatenate([a, np.array([""] * n0, dtype=object)])
    z_all = np.concatenate([z, np.full(n0, np.nan)])
    y_all = np.concatenate([y, np.full(n0, np.nan)])
    return StudyDataset(spec.schema, s, a_all, z_all, y_all, cov)


# -- misspecification experiments ----------------------------------------------


@dataclass(frozen=True)
class MisspecConfig:
    """Which nuisance groups get the correct covariate set.

    Groups named in ``correct`` (subset of q, m, g, h) are fit on the full
    covariate design; the rest lose their first covariate, which for a
    single-covariate process means an intercept-only fit.
    """

    label: str
    correct: frozenset

    def __post_init__(self) -> None:
        bad = set(self.correct) - set(NUISANCE_KEYS)
        if bad:
            raise ConfigError(f"unknown nuisance keys {sorted(bad)}; valid keys are {list(NUISANCE_KEYS)}")
        object.__setattr__(self, "correct", frozenset(self.correct))

    def designs(self, schema: CovariateSchema) -> dict[str, tuple[str, ...] | None]:
        reduced = tuple(schema.names[1:])
        return {key: (None if key in self.correct else reduced) for key in NUISANCE_KEYS}


ALL_CORRECT = MisspecConfig("all-correct", frozenset(NUISANCE_KEYS))


@dataclass(frozen=True)
class ExperimentRow:
    """Aggregated error metrics for one (config, size, delta, estimator) cell."""

    config: str
    size: int
    n1: int
    n0: int
    estimator: str
    arm: str
    delta: float
    oracle: float
    reps: int
    failures: int
    mean_bias: float
    mcse_bias: float
    rmse: float
    coverage: float | None


def run_dr_experiment(
    spec: DgpSpec,
    configs: Sequence[MisspecConfig],
    sizes: Sequence[int],
    reps: int,
    deltas: float | Sequence[float] = 0.5,
    *,
    arm: str | None = None,
    level: float = 0.95,
    seed: int = 0,
    truncation: tuple[float, float] = (0.001, 0.999),
    max_failure_fraction: float = 0.02,
) -> list[ExperimentRow]:
    """Repeated-sampling bias/coverage study against the enumeration oracle.

    For every total size, ``reps`` datasets are generated (per-rep seed
    substreams), each misspecification config refits nuisances on the same
    data, and both estimators are evaluated at every delta without
    refitting. Reps where a fit fails are recorded and skipped; more than
    ``max_failure_fraction`` of failures in any cell aborts.

    Coverage is reported for the one-step estimator only (the plug-in has
    no influence-curve variance).
    """
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    if not sizes:
        raise ConfigError("need at least one size")
    if not configs:
        raise ConfigError("need at least one misspecification config")
    arm = spec.arms[1] if arm is None else arm
    if arm not in spec.arms:
        raise ConfigError(f"unknown arm {arm!r}")
    delta_list = [float(d) for d in (deltas if isinstance(deltas, (list, tuple, np.ndarray)) else [deltas])]
    ratio = spec.n1 / (spec.n1 + spec.n0)
    design_by_config = {c.label: c.designs(spec.schema) for c in configs}
    oracles = {d: oracle_psi(spec, arm, d) for d in delta_list}

    rows: list[ExperimentRow] = []
    for size in sizes:
        n1 = max(1, round(size * ratio))
        n0 = max(1, size - n1)
        est: dict[tuple[str, float, str], list[float]] = {}
        cover: dict[tuple[str, float], list[bool]] = {}
        failures = {c.label: 0 for c in configs}
        for rep in range(reps):
            ds = generate_data(spec, n1, n0, seed=[seed, size, rep])
            for config in configs:
                try:
                    nu = fit_nuisance_set(ds, truncation, design_by_config[config.label])
                    for d in delta_list:
                        rg = gcomp_psi(nu, arm, d)
                        ro = onestep_psi(nu, arm, d)
                        ci = wald_ci(ro.point, eic_variance(ro).variance, level)
                        est.setdefault((config.label, d, "gcomp"), []).append(rg.point)
                        est.setdefault((config.label, d, "onestep"), []).append(ro.point)
                        cover.setdefault((config.label, d), []).append(
                            ci.lower <= oracles[d] <= ci.upper
                        )
                except FitError:
                    failures[config.label] += 1

        for config in configs:
            n_failed = failures[config.label]
            if n_failed > max_failure_fraction * reps:
                raise FitError(
                    f"config {config.label!r} at size {size}: {n_failed}/{reps} reps "
                    f"failed, above the {max_failure_fraction:.0%} budget"
                )
            for d in delta_list:
                for estimator in ("gcomp", "onestep"):
                    vals = np.asarray(est.get((config.label, d, estimator), []), dtype=float)
                    if vals.size == 0:
                        continue
                    err = vals - oracles[d]
                    cov_flags = cover.get((config.label, d), [])
                    rows.append(
                        ExperimentRow(
                            config=config.label,
                            size=int(size),
                            n1=n1,
                            n0=n0,
                            estimator=estimator,
                            arm=arm,
                            delta=d,
                            oracle=oracles[d],
                            reps=int(vals.size),
                            failures=n_failed,
                            mean_bias=float(err.mean()),
                            mcse_bias=float(err.std(ddof=1) / np.sqrt(err.size)) if err.size > 1 else float("nan"),
                            rmse=float(np.sqrt(np.mean(err**2))),
                            coverage=float(np.mean(cov_flags)) if estimator == "onestep" and cov_flags else None,
                        )
                    )
    return rows
