"""Variance engines and confidence intervals for the transport estimators.

Three engines with different assumptions and costs:

* ``eic_variance``      -- sample variance of the influence values over n;
  only defined for asymptotically linear estimators (the one-step).
* ``bootstrap_variance``-- nonparametric bootstrap resampling trial and
  target rows separately so both sample sizes stay fixed by design.
* ``sandwich_variance`` -- stacked estimating-equation (M-estimation)
  variance treating every nuisance coefficient as jointly estimated, with
  a numerically differentiated bread matrix.

Normal quantiles come from scipy's rational approximation of the inverse
normal CDF, accurate to well below 1e-9.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, ndtri

from .data import StudyDataset
from .estimators import EstimateResult, as_delta
from .exceptions import ConfigError, FitError
from .nuisance import NuisanceSet


@dataclass(frozen=True)
class VarianceEstimate:
    """A variance for one point estimate, tagged with the engine that made it."""

    method: str
    variance: float
    se: float
    replicates: int | None = None
    failures: int = 0
    stack_dimension: int | None = None


@dataclass(frozen=True)
class CiResult:
    point: float
    level: float
    se: float
    lower: float
    upper: float


def eic_variance(influence) -> VarianceEstimate:
    """Influence-curve variance: sample variance of the values divided by n."""
    if isinstance(influence, EstimateResult):
        influence = influence.influence
    vals = np.asarray(influence, dtype=float)
    if vals.size == 0:
        raise ValueError("estimator has no influence values; use bootstrap or sandwich")
    if vals.size < 2:
        raise ValueError("need at least two influence values")
    var = float(np.var(vals, ddof=1) / vals.size)
    return VarianceEstimate(method="eic", variance=var, se=float(np.sqrt(var)))


def wald_ci(point: float, variance: float, level: float = 0.95) -> CiResult:
    """Normal-quantile interval ``point +/- z * sqrt(variance)``."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    if not np.isfinite(variance) or variance < 0.0:
        raise ValueError(f"variance must be finite and >= 0, got {variance}")
    se = float(np.sqrt(variance))
    z = float(ndtri(0.5 + level / 2.0))
    return CiResult(point=float(point), level=float(level), se=se,
                    lower=float(point - z * se), upper=float(point + z * se))


# -- bootstrap -----------------------------------------------------------------


def _canonical_stratum_order(ds: StudyDataset, mask: np.ndarray) -> np.ndarray:
    """Indices of a sample stratum sorted by row content, not row position.

    Sorting by content makes the resampling plan depend only on the multiset
    of rows, so permuting the input file cannot change the bootstrap.
    """
    idx = np.flatnonzero(mask)
    arm_order = {arm: i for i, arm in enumerate(ds.arms)}
    a_code = np.array([arm_order.get(v, -1) for v in ds.a[idx]], dtype=float)
    keys = [np.nan_to_num(ds.y[idx], nan=-1.0), np.nan_to_num(ds.z[idx], nan=-1.0), a_code]
    for c in reversed(ds.schema.covariates):
        col = ds.covariates[c.name][idx]
        if c.kind == "categorical":
            code = {lvl: i for i, lvl in enumerate(c.levels)}
            keys.insert(0, np.array([code[v] for v in col], dtype=float))
        else:
            keys.insert(0, col.astype(float))
    return idx[np.lexsort(keys)]


def _resample(ds: StudyDataset, trial_sorted: np.ndarray, target_sorted: np.ndarray,
              seed, replicate: int) -> StudyDataset:
    rng = np.random.default_rng([seed, replicate])
    pick1 = trial_sorted[np.sort(rng.integers(0, trial_sorted.size, trial_sorted.size))]
    pick0 = target_sorted[np.sort(rng.integers(0, target_sorted.size, target_sorted.size))]
    rows = np.concatenate([pick1, pick0])
    return StudyDataset(
        ds.schema,
        ds.s[rows],
        ds.a[rows],
        ds.z[rows],
        ds.y[rows],
        {name: ds.covariates[name][rows] for name in ds.schema.names},
    )


def bootstrap_replicates(
    ds: StudyDataset,
    fn: Callable[[StudyDataset], Sequence[float]],
    B: int,
    seed,
    *,
    threads: int | None = None,
    max_failure_fraction: float = 0.05,
) -> tuple[np.ndarray, int]:
    """Run ``fn`` on ``B`` stratified resamples; return (values, n_failed).

    Resampling is stratified by sample membership: trial rows are drawn with
    replacement among trial rows and target rows among target rows, keeping
    both sample sizes fixed. Each replicate uses its own seed substream, so
    results do not depend on execution order or thread count. Replicates
    where ``fn`` raises a fit or inadmissibility error are dropped, up to
    ``max_failure_fraction`` of B.
    """
    if B < 1:
        raise ValueError("need at least one replicate")
    trial_sorted = _canonical_stratum_order(ds, ds.s == 1)
    target_sorted = _canonical_stratum_order(ds, ds.s == 0)

    def one(r: int):
        try:
            return np.asarray(fn(_resample(ds, trial_sorted, target_sorted, seed, r)), dtype=float)
        except (FitError, ConfigError):
            return None

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(r) for r in range(B)]
    kept = [r for r in results if r is not None]
    failed = B - len(kept)
    if failed > max_failure_fraction * B:
        raise FitError(
            f"{failed} of {B} bootstrap replicates failed, above the "
            f"{max_failure_fraction:.0%} budget"
        )
    if not kept:
        raise FitError("all bootstrap replicates failed")
    return np.vstack(kept), failed


def bootstrap_variance(
    ds: StudyDataset,
    pipeline: Callable[[StudyDataset], float],
    B: int,
    seed,
    *,
    threads: int | None = None,
) -> VarianceEstimate:
    """Variance of a scalar pipeline over stratified bootstrap resamples.

    ``pipeline`` should refit nuisances and re-evaluate the estimator on
    the resampled dataset; anything cached from the original data would
    understate the variance.
    """
    if B < 50:
        raise ValueError(f"need B >= 50 bootstrap replicates, got {B}")
    vals, failed = bootstrap_replicates(
        ds, lambda d: (float(pipeline(d)),), B, seed, threads=threads
    )
    flat = vals[:, 0]
    var = float(np.var(flat, ddof=1))
    return VarianceEstimate(
        method="bootstrap",
        variance=var,
        se=float(np.sqrt(var)),
        replicates=int(flat.size),
        failures=failed,
    )


# -- stacked estimating-equation (sandwich) variance ---------------------------


def _design_cache(ds: StudyDataset, nu: NuisanceSet):
    from .data import design_matrix

    cache: dict[object, np.ndarray] = {}

    def get(key: str) -> np.ndarray:
        covs = nu.designs.get(key)
        if covs not in cache:
            cache[covs] = design_matrix(ds, None, covs)[0]
        return cache[covs]

    return get


class _Stack:
    """Per-record score matrix for one stacked estimating-equation system.

    Scores use raw (untruncated) logistic predictions; the estimator's
    truncation is an evaluation-time guard, not part of the estimating
    equations.
    """

    def __init__(self, ds: StudyDataset, nu: NuisanceSet, arms, deltas, which: str):
        self.ds = ds
        self.nu = nu
        self.arms = arms            # one or two arm labels
        self.which = which          # "gcomp" | "onestep"
        self.trial = (ds.s == 1).astype(float)
        self.target = 1.0 - self.trial
        self.z = np.nan_to_num(ds.z, nan=0.0)
        self.y = np.nan_to_num(ds.y, nan=0.0)
        get = _design_cache(ds, nu)
        self.Xq, self.Xm = get("q"), get("m")
        self.Xg, self.Xh = get("g"), get("h")
        self.in_arm = {a: ((ds.a == a) & (ds.s == 1)).astype(float) for a in arms}
        self.a_pos = (ds.a == nu.positive_arm).astype(float)
        self.dvals = {a: as_delta(a, d).values_for(nu) for a, d in zip(arms, deltas)}
        # stack layout: per arm (beta1, beta0, alpha), then shared gamma,
        # epsilon (one-step only), then one psi per arm, then the contrast
        # when two arms are given
        self.pq, self.pm = self.Xq.shape[1], self.Xm.shape[1]
        self.pg, self.ph = self.Xg.shape[1], self.Xh.shape[1]
        slices = []
        pos = 0
        for _ in arms:
            for width in (self.pq, self.pq, self.pm):
                slices.append(slice(pos, pos + width))
                pos += width
        if which == "onestep":
            slices.append(slice(pos, pos + self.pg))
            pos += self.pg
            slices.append(slice(pos, pos + self.ph))
            pos += self.ph
        for _ in arms:
            slices.append(slice(pos, pos + 1))
            pos += 1
        if len(arms) == 2:
            slices.append(slice(pos, pos + 1))
            pos += 1
        self.slices = slices
        self.dim = pos

    def theta_hat(self) -> np.ndarray:
        nu = self.nu
        theta = np.empty(self.dim)
        i = 0
        for a in self.arms:
            for key in (f"q1[arm={a}]", f"q0[arm={a}]", f"m[arm={a}]"):
                coefs = nu.models[key].coefficients
                theta[self.slices[i]] = coefs
                i += 1
        if self.which == "onestep":
            theta[self.slices[i]] = nu.models["g"].coefficients
            i += 1
            theta[self.slices[i]] = nu.models["h"].coefficients
            i += 1
        psis = []
        for a in self.arms:
            psi = self._solve_psi(theta, a)
            theta[self.slices[i]] = psi
            psis.append(psi)
            i += 1
        if len(self.arms) == 2:
            theta[self.slices[i]] = psis[0] - psis[1]
        return theta

    def _unpack(self, theta: np.ndarray):
        vals = [theta[s] for s in self.slices]
        out = {}
        i = 0
        for a in self.arms:
            out[f"b1:{a}"], out[f"b0:{a}"], out[f"al:{a}"] = vals[i], vals[i + 1], vals[i + 2]
            i += 3
        if self.which == "onestep":
            out["ga"], out["ep"] = vals[i], vals[i + 1]
            i += 2
        for a in self.arms:
            out[f"psi:{a}"] = float(vals[i][0])
            i += 1
        if len(self.arms) == 2:
            out["rd"] = float(vals[i][0])
        return out

    def _estimator_summand(self, par, arm: str) -> np.ndarray:
        """Per-record summand whose total over n0 is the point estimate."""
        q1 = expit(self.Xq @ par[f"b1:{arm}"])
        q0 = expit(self.Xq @ par[f"b0:{arm}"])
        m = expit(self.Xm @ par[f"al:{arm}"])
        d = self.dvals[arm]
        md = m * d
        mu = q1 * md + q0 * (1.0 - md)
        if self.which == "gcomp":
            return self.target * mu
        g_pos = expit(self.Xg @ par["ga"])
        g = g_pos if arm == self.nu.positive_arm else 1.0 - g_pos
        h = expit(self.Xh @ par["ep"])
        qz = np.where(self.z == 1.0, q1, q0)
        w_resid = self.z * d + (1.0 - self.z) * (1.0 - md) / (1.0 - m)
        core = w_resid * (self.y - qz) + d * (q1 - q0) * (self.z - m)
        return self.in_arm[arm] * core * (1.0 - h) / (h * g) + self.target * mu

    def _solve_psi(self, theta: np.ndarray, arm: str) -> float:
        par = self._unpack_partial(theta)
        summand = self._estimator_summand(par, arm)
        return float(summand.sum() / self.ds.n0)

    def _unpack_partial(self, theta):
        # psi entries may still be unset while solving; only coefficient
        # blocks are needed here
        vals = [theta[s] for s in self.slices]
        out = {}
        i = 0
        for a in self.arms:
            out[f"b1:{a}"], out[f"b0:{a}"], out[f"al:{a}"] = vals[i], vals[i + 1], vals[i + 2]
            i += 3
        if self.which == "onestep":
            out["ga"], out["ep"] = vals[i], vals[i + 1]
        return out

    def scores(self, theta: np.ndarray) -> np.ndarray:
        par = self._unpack(theta)
        n = self.ds.n
        cols = []
        for a in self.arms:
            q1 = expit(self.Xq @ par[f"b1:{a}"])
            q0 = expit(self.Xq @ par[f"b0:{a}"])
            m = expit(self.Xm @ par[f"al:{a}"])
            ia = self.in_arm[a]
            cols.append((ia * self.z * (self.y - q1))[:, None] * self.Xq)
            cols.append((ia * (1.0 - self.z) * (self.y - q0))[:, None] * self.Xq)
            cols.append((ia * (self.z - m))[:, None] * self.Xm)
        if self.which == "onestep":
            g_pos = expit(self.Xg @ par["ga"])
            h = expit(self.Xh @ par["ep"])
            cols.append((self.trial * (self.a_pos - g_pos))[:, None] * self.Xg)
            cols.append((self.ds.s - h)[:, None] * self.Xh)
        for a in self.arms:
            # same centering for both stacks: the gcomp summand lives on
            # target rows only, the one-step adds the trial residual term
            summand = self._estimator_summand(par, a)
            cols.append((summand - self.target * par[f"psi:{a}"])[:, None])
        if len(self.arms) == 2:
            a1, a2 = self.arms
            rd_row = np.full(n, par[f"psi:{a1}"] - par[f"psi:{a2}"] - par["rd"])
            cols.append(rd_row[:, None])
        return np.hstack(cols)

    def mean_score(self, theta: np.ndarray) -> np.ndarray:
        return self.scores(theta).mean(axis=0)


def _sandwich_from_stack(stack: _Stack) -> tuple[np.ndarray, np.ndarray]:
    theta = stack.theta_hat()
    d = stack.dim
    bread = np.empty((d, d))
    for j in range(d):
        step = max(1e-6, 1e-6 * abs(theta[j]))
        hi = theta.copy()
        lo = theta.copy()
        hi[j] += step
        lo[j] -= step
        bread[:, j] = (stack.mean_score(hi) - stack.mean_score(lo)) / (2.0 * step)
    scores = stack.scores(theta)
    meat = scores.T @ scores / stack.ds.n
    try:
        binv_m = np.linalg.solve(bread, meat)
        cov = np.linalg.solve(bread, binv_m.T).T / stack.ds.n
    except np.linalg.LinAlgError as exc:
        raise FitError("singular bread matrix in sandwich variance") from exc
    return cov, theta


def _check_sandwich_inputs(nu: NuisanceSet, which: str) -> None:
    if which not in ("gcomp", "onestep"):
        raise ValueError(f"which must be 'gcomp' or 'onestep', got {which!r}")
    if nu.crossfit:
        raise ValueError("sandwich variance assumes full-sample nuisance fits, not cross-fitting")
    if not nu.models:
        raise ValueError("nuisance set carries no fitted models")


def sandwich_variance(
    ds: StudyDataset, nu: NuisanceSet, arm: str, delta, which: str = "onestep"
) -> VarianceEstimate:
    """Stacked estimating-equation variance for one arm's point estimate.

    The stack holds every logistic score that produced the nuisance set
    (outcome fits, adherence fit, plus assignment and sampling fits for the
    one-step) and one final equation defining the estimator; the variance is
    the last diagonal entry of the usual bread/meat sandwich with a central
    finite-difference bread.
    """
    _check_sandwich_inputs(nu, which)
    if arm not in nu.arms:
        raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    stack = _Stack(ds, nu, (arm,), (delta,), which)
    cov, _ = _sandwich_from_stack(stack)
    var = float(cov[-1, -1])
    return VarianceEstimate(
        method="sandwich",
        variance=var,
        se=float(np.sqrt(max(var, 0.0))),
        stack_dimension=stack.dim,
    )


def sandwich_variance_contrast(
    ds: StudyDataset,
    nu: NuisanceSet,
    arm1: str,
    arm0: str,
    delta1,
    delta0,
    which: str = "onestep",
) -> VarianceEstimate:
    """Sandwich variance of the contrast estimate for ``arm1`` minus ``arm0``.

    Both arms' systems are stacked jointly (sharing the assignment and
    sampling equations) with a final equation for the difference, so the
    correlation induced by shared data and shared nuisances is handled
    inside one system.
    """
    _check_sandwich_inputs(nu, which)
    for arm in (arm1, arm0):
        if arm not in nu.arms:
            raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    if arm1 == arm0:
        raise ValueError("contrast needs two distinct arms")
    stack = _Stack(ds, nu, (arm1, arm0), (delta1, delta0), which)
    cov, _ = _sandwich_from_stack(stack)
    var = float(cov[-1, -1])
    return VarianceEstimate(
        method="sandwich",
        variance=var,
        se=float(np.sqrt(max(var, 0.0))),
        stack_dimension=stack.dim,
    )
