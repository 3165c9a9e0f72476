"""Nuisance model fitting for the transport estimators.

Five logistic regressions feed the estimators:

* ``q1``, ``q0`` -- outcome means among trial adherers / non-adherers, per arm
* ``m``         -- adherence probability given covariates, per arm
* ``g``         -- arm assignment probability among trial rows
* ``h``         -- probability a row comes from the trial sample

All are fit by plain IRLS/Newton iterations with an explicit convergence
flag, predictions are truncated into a configurable interval, and the whole
set can optionally be cross-fit over deterministic covariate-stratified
folds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import StudyDataset, design_columns, design_matrix
from .exceptions import DataError, DegenerateResponseError, FitError, SeparationError

# Coefficients this large put fitted probabilities within 3e-7 of 0/1 for
# unit-scale covariates. On separated data the score can shrink below
# tolerance while the coefficients walk off to infinity, so the bound is
# checked at termination whether or not the iterations "converged".
SEPARATION_BOUND = 15.0

NUISANCE_KEYS = ("q", "m", "g", "h")


@dataclass(frozen=True)
class LogisticModel:
    """A fitted logistic regression.

    ``converged`` is False when the score equations were not solved to
    tolerance within the iteration cap; predictions from such a model are
    usable but a warning was emitted at fit time.
    """

    coefficients: np.ndarray
    columns: tuple[str, ...]
    converged: bool
    iterations: int
    log_likelihood: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return expit(np.asarray(X, dtype=float) @ self.coefficients)


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    columns: Sequence[str] | None = None,
) -> LogisticModel:
    """Maximum-likelihood logistic fit via IRLS/Newton.

    Convergence means every score component ``X'(y - p)`` is within ``tol``
    of zero, so saturated designs reproduce stratum frequencies exactly.
    Responses may be fractional (bounded in [0, 1]); the Bernoulli working
    likelihood still applies.

    Raises
    ------
    DegenerateResponseError
        All responses identical; no interior maximum exists.
    SeparationError
        Iterations stalled with some coefficient beyond ``SEPARATION_BOUND``,
        the signature of complete or quasi separation.
    FitError
        Fewer rows than columns, or a singular information matrix.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"incompatible shapes X{X.shape} y{y.shape}")
    n, p = X.shape
    if n < p:
        raise FitError(f"cannot fit {p} coefficients on {n} rows")
    if np.all(y == y[0]):
        raise DegenerateResponseError(f"response is constant ({y[0]!r}) on {n} rows")
    cols = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(p))
    if len(cols) != p:
        raise ValueError("column labels do not match design width")

    beta = np.zeros(p)
    iterations = 0
    converged = False
    for _ in range(max_iter):
        prob = expit(X @ beta)
        score = X.T @ (y - prob)
        if np.max(np.abs(score)) <= tol:
            converged = True
            break
        weight = np.clip(prob * (1.0 - prob), 1e-10, None)
        hessian = X.T @ (weight[:, None] * X)
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError as exc:
            if np.max(np.abs(beta)) > SEPARATION_BOUND:
                raise SeparationError(
                    f"diverging coefficients (max |b| = {np.max(np.abs(beta)):.2f})"
                ) from exc
            raise FitError("singular information matrix") from exc
        beta = beta + step
        iterations += 1
    if not converged:
        prob = expit(X @ beta)
        score = X.T @ (y - prob)
        converged = np.max(np.abs(score)) <= tol
    if np.max(np.abs(beta)) > SEPARATION_BOUND:
        raise SeparationError(
            f"coefficients diverged (max |b| = {np.max(np.abs(beta)):.2f}); "
            "data look completely or quasi separated"
        )
    if not converged:
        warnings.warn(
            f"logistic fit did not converge in {max_iter} iterations "
            f"(max |score| = {np.max(np.abs(score)):.2e})",
            stacklevel=2,
        )
    prob = np.clip(expit(X @ beta), 1e-12, 1.0 - 1e-12)
    ll = float(np.sum(y * np.log(prob) + (1.0 - y) * np.log(1.0 - prob)))
    return LogisticModel(beta, cols, converged, iterations, ll)


# -- fold assignment -----------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    """Deterministic fold labels, stratified by (sample, arm)."""

    k: int
    seed: int
    fold_of: np.ndarray
    effective_k: Mapping[str, int] = field(default_factory=dict)


def make_folds(ds: StudyDataset, k: int, seed: int) -> FoldAssignment:
    """Assign every row to one of ``k`` folds, stratified by (s, arm).

    Each stratum is shuffled with its own slice of a seeded generator and
    split as evenly as counts allow. A stratum with fewer than ``k`` rows
    gets its own reduced fold count (with a warning) so no training fold
    loses the stratum entirely.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    fold_of = np.full(ds.n, -1, dtype=int)
    effective: dict[str, int] = {}
    strata: list[tuple[str, np.ndarray]] = [("s=0", np.flatnonzero(ds.s == 0))]
    for arm in ds.arms:
        strata.append((f"s=1,a={arm}", np.flatnonzero((ds.s == 1) & (ds.a == arm))))
    for label, idx in strata:
        if idx.size == 0:
            continue
        k_eff = min(k, int(idx.size))
        if k_eff < k:
            warnings.warn(
                f"stratum {label} has {idx.size} rows; using {k_eff} folds there instead of {k}",
                stacklevel=2,
            )
        effective[label] = k_eff
        perm = rng.permutation(idx)
        fold_of[perm] = np.arange(perm.size) % k_eff
    return FoldAssignment(k, seed, fold_of, effective)


# -- the nuisance set -----------------------------------------------------------


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted nuisance models plus per-row predictions for one dataset.

    Prediction arrays cover every row of ``dataset`` (the models are
    functions of covariates only, so target rows get predictions too) and
    are truncated into ``truncation``. ``g`` maps each arm to its assignment
    probability; for the two-arm designs supported here the two arrays sum
    to one because the non-reference arm is modelled and the other is its
    complement.
    """

    dataset: StudyDataset
    arms: tuple[str, str]
    positive_arm: str
    q1: Mapping[str, np.ndarray]
    q0: Mapping[str, np.ndarray]
    m: Mapping[str, np.ndarray]
    g: Mapping[str, np.ndarray]
    h: np.ndarray
    k_hat: float
    truncation: tuple[float, float]
    models: Mapping[str, LogisticModel]
    designs: Mapping[str, tuple[str, ...] | None]
    crossfit: bool = False
    folds: FoldAssignment | None = None
    fold_models: tuple[Mapping[str, LogisticModel], ...] | None = None
    truncation_events: int = 0

    def design_for(self, key: str) -> tuple[str, ...] | None:
        """Covariate list used for one nuisance key ('q', 'm', 'g', 'h')."""
        return self.designs.get(key)

    def with_dataset(self, ds: StudyDataset) -> "NuisanceSet":
        if ds.n != self.dataset.n:
            raise ValueError("replacement dataset has different length")
        return replace(self, dataset=ds)


def _resolve_designs(
    schema_names: tuple[str, ...], designs: Mapping[str, Sequence[str] | None] | None
) -> dict[str, tuple[str, ...] | None]:
    out: dict[str, tuple[str, ...] | None] = {key: None for key in NUISANCE_KEYS}
    if designs:
        unknown = set(designs) - set(NUISANCE_KEYS)
        if unknown:
            raise ValueError(f"unknown nuisance keys in designs: {sorted(unknown)}")
        for key, val in designs.items():
            if val is None:
                out[key] = None
            else:
                bad = set(val) - set(schema_names)
                if bad:
                    raise ValueError(f"design for {key!r} names unknown covariates {sorted(bad)}")
                out[key] = tuple(n for n in schema_names if n in set(val))
    return out


def _truncate(arr: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, int]:
    clipped = np.clip(arr, lo, hi)
    return clipped, int(np.sum((arr < lo) | (arr > hi)))


def _fit_on(X_all, mask, y, label, tol, max_iter, columns) -> LogisticModel:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise FitError(f"{label}: no rows to fit on")
    try:
        return fit_logistic(X_all[idx], y[idx], tol=tol, max_iter=max_iter, columns=columns)
    except FitError as exc:
        # keep the subclass (separation, degenerate response) while
        # prefixing which nuisance fit failed
        raise type(exc)(f"{label}: {exc}") from exc


def _check_truncation(truncation: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(truncation[0]), float(truncation[1])
    if not 0.0 < lo < hi < 1.0:
        raise ValueError(f"truncation bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")
    return lo, hi


def fit_nuisance_set(
    ds: StudyDataset,
    truncation: tuple[float, float] = (0.001, 0.999),
    designs: Mapping[str, Sequence[str] | None] | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> NuisanceSet:
    """Fit all nuisance models on the full dataset and predict every row.

    ``designs`` optionally restricts the covariates entering each nuisance
    ('q', 'm', 'g', 'h'; an empty list gives an intercept-only fit), which
    is the misspecification device used by the simulation experiments.

    Only two-arm trials are supported: assignment is modelled once for the
    lexicographically larger arm label and complemented for the other, so
    the per-arm assignment probabilities sum to one by construction.
    """
    arms = ds.arms
    if len(arms) != 2:
        raise DataError(f"exactly two trial arms are supported, found {list(arms)}")
    lo, hi = _check_truncation(truncation)
    design_map = _resolve_designs(ds.schema.names, designs)

    X_cache: dict[tuple[str, ...] | None, tuple[np.ndarray, list[str]]] = {}

    def full_X(key: str) -> tuple[np.ndarray, list[str]]:
        covs = design_map[key]
        if covs not in X_cache:
            X, _ = design_matrix(ds, None, covs)
            X_cache[covs] = (X, design_columns(ds.schema, covs))
        return X_cache[covs]

    trial = ds.s == 1
    y = np.where(trial, ds.y, 0.0)
    z = np.where(trial, ds.z, 0.0)
    positive = arms[1]

    models: dict[str, LogisticModel] = {}
    q1: dict[str, np.ndarray] = {}
    q0: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    events = 0

    Xq, cols_q = full_X("q")
    Xm, cols_m = full_X("m")
    for arm in arms:
        in_arm = trial & (ds.a == arm)
        mod = _fit_on(Xq, in_arm & (z == 1.0), y, f"q1[arm={arm}]", tol, max_iter, cols_q)
        models[f"q1[arm={arm}]"] = mod
        q1[arm], e = _truncate(mod.predict(Xq), lo, hi)
        events += e
        mod = _fit_on(Xq, in_arm & (z == 0.0), y, f"q0[arm={arm}]", tol, max_iter, cols_q)
        models[f"q0[arm={arm}]"] = mod
        q0[arm], e = _truncate(mod.predict(Xq), lo, hi)
        events += e
        mod = _fit_on(Xm, in_arm, z, f"m[arm={arm}]", tol, max_iter, cols_m)
        models[f"m[arm={arm}]"] = mod
        m[arm], e = _truncate(mod.predict(Xm), lo, hi)
        events += e

    Xg, cols_g = full_X("g")
    a_pos = (ds.a == positive).astype(float)
    mod_g = _fit_on(Xg, trial, a_pos, "g", tol, max_iter, cols_g)
    models["g"] = mod_g
    g_pos, e = _truncate(mod_g.predict(Xg), lo, hi)
    events += e
    g = {positive: g_pos, arms[0]: 1.0 - g_pos}

    Xh, cols_h = full_X("h")
    mod_h = _fit_on(Xh, np.ones(ds.n, dtype=bool), ds.s.astype(float), "h", tol, max_iter, cols_h)
    models["h"] = mod_h
    h, e = _truncate(mod_h.predict(Xh), lo, hi)
    events += e

    return NuisanceSet(
        dataset=ds,
        arms=arms,
        positive_arm=positive,
        q1=q1,
        q0=q0,
        m=m,
        g=g,
        h=h,
        k_hat=ds.n0 / ds.n,
        truncation=(lo, hi),
        models=models,
        designs=design_map,
        truncation_events=events,
    )


def crossfit_predictions(
    ds: StudyDataset,
    folds: FoldAssignment,
    truncation: tuple[float, float] = (0.001, 0.999),
    designs: Mapping[str, Sequence[str] | None] | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> NuisanceSet:
    """Cross-fit the nuisance set: each row is predicted by models trained
    on the complement of its fold.

    The sampling fraction ``k_hat`` is a sample-size ratio and is not
    cross-fit. Fit failures are labelled with the fold that caused them.
    """
    arms = ds.arms
    if len(arms) != 2:
        raise DataError(f"exactly two trial arms are supported, found {list(arms)}")
    if folds.fold_of.shape != (ds.n,):
        raise ValueError("fold assignment does not match dataset length")
    lo, hi = _check_truncation(truncation)
    design_map = _resolve_designs(ds.schema.names, designs)
    positive = arms[1]

    X_cache: dict[tuple[str, ...] | None, tuple[np.ndarray, list[str]]] = {}

    def full_X(key: str):
        covs = design_map[key]
        if covs not in X_cache:
            X, _ = design_matrix(ds, None, covs)
            X_cache[covs] = (X, design_columns(ds.schema, covs))
        return X_cache[covs]

    trial = ds.s == 1
    y = np.where(trial, ds.y, 0.0)
    z = np.where(trial, ds.z, 0.0)
    a_pos = (ds.a == positive).astype(float)
    s_float = ds.s.astype(float)

    q1 = {arm: np.empty(ds.n) for arm in arms}
    q0 = {arm: np.empty(ds.n) for arm in arms}
    m = {arm: np.empty(ds.n) for arm in arms}
    g_pos_pred = np.empty(ds.n)
    h_pred = np.empty(ds.n)
    fold_models: list[dict[str, LogisticModel]] = []

    fold_ids = np.unique(folds.fold_of)
    for f in fold_ids:
        test = folds.fold_of == f
        train = ~test
        label = f"fold {int(f)}"
        per_fold: dict[str, LogisticModel] = {}
        Xq, cols_q = full_X("q")
        Xm, cols_m = full_X("m")
        for arm in arms:
            in_arm = trial & (ds.a == arm)
            mod = _fit_on(Xq, train & in_arm & (z == 1.0), y, f"{label} q1[arm={arm}]", tol, max_iter, cols_q)
            per_fold[f"q1[arm={arm}]"] = mod
            q1[arm][test] = mod.predict(Xq[test])
            mod = _fit_on(Xq, train & in_arm & (z == 0.0), y, f"{label} q0[arm={arm}]", tol, max_iter, cols_q)
            per_fold[f"q0[arm={arm}]"] = mod
            q0[arm][test] = mod.predict(Xq[test])
            mod = _fit_on(Xm, train & in_arm, z, f"{label} m[arm={arm}]", tol, max_iter, cols_m)
            per_fold[f"m[arm={arm}]"] = mod
            m[arm][test] = mod.predict(Xm[test])
        Xg, cols_g = full_X("g")
        mod = _fit_on(Xg, train & trial, a_pos, f"{label} g", tol, max_iter, cols_g)
        per_fold["g"] = mod
        g_pos_pred[test] = mod.predict(Xg[test])
        Xh, cols_h = full_X("h")
        mod = _fit_on(Xh, train, s_float, f"{label} h", tol, max_iter, cols_h)
        per_fold["h"] = mod
        h_pred[test] = mod.predict(Xh[test])
        fold_models.append(per_fold)

    events = 0
    for d in (q1, q0, m):
        for arm in arms:
            d[arm], e = _truncate(d[arm], lo, hi)
            events += e
    g_pos_pred, e = _truncate(g_pos_pred, lo, hi)
    events += e
    h_pred, e = _truncate(h_pred, lo, hi)
    events += e

    return NuisanceSet(
        dataset=ds,
        arms=arms,
        positive_arm=positive,
        q1=q1,
        q0=q0,
        m=m,
        g={positive: g_pos_pred, arms[0]: 1.0 - g_pos_pred},
        h=h_pred,
        k_hat=ds.n0 / ds.n,
        truncation=(lo, hi),
        models={},
        designs=design_map,
        crossfit=True,
        folds=folds,
        fold_models=tuple(fold_models),
        truncation_events=events,
    )
