"""Point estimators for target-population mean potential outcomes.

The estimand is the mean outcome in the target population (``s == 0``) had
everyone received arm ``a``, when target-population adherence is a
user-specified multiple ``delta`` of trial adherence at the same
covariates. Two estimators are provided:

* ``gcomp_psi``   -- plug-in standardization over the target sample;
* ``onestep_psi`` -- the plug-in corrected by the sample average of the
  estimated influence curve, which adds protection against nuisance
  misspecification.

Reference estimators for the trial mean (``trial_onestep``) and for the
transported mean when target adherence equals trial adherence
(``transport_onestep_setting1``) support the ``delta == 1`` reduction
checks. Both ``gcomp_psi`` and ``onestep_psi`` are affine in a constant
``delta``; nothing here refits nuisances, so sweeping ``delta`` is cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import ConfigError
from .nuisance import NuisanceSet

# Forgive float dust when a user passes delta = 1/m_hat exactly.
_INVARIANT_SLACK = 1e-12


@dataclass(frozen=True)
class DeltaValue:
    """The adherence-ratio sensitivity parameter for one arm.

    Either a single nonnegative constant, or a lookup table over the levels
    of one binary/categorical covariate (continuous covariates cannot index
    delta). The admissibility constraint is that predicted target
    adherence ``m_hat * delta`` stays within [0, 1] on every target row.
    """

    arm: str
    constant: float | None = None
    covariate: str | None = None
    table: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if (self.constant is None) == (self.table is None):
            raise ConfigError("DeltaValue needs exactly one of a constant or a lookup table")
        if self.constant is not None:
            val = float(self.constant)
            if not np.isfinite(val) or val < 0.0:
                raise ConfigError(f"delta must be finite and >= 0, got {self.constant!r}")
        else:
            if not self.covariate:
                raise ConfigError("a delta lookup table needs a covariate name")
            if not self.table:
                raise ConfigError("delta lookup table is empty")
            for lvl, val in self.table.items():
                if not np.isfinite(val) or val < 0.0:
                    raise ConfigError(f"delta for level {lvl!r} must be finite and >= 0, got {val!r}")

    def values_for(self, nu: NuisanceSet) -> np.ndarray:
        """Per-row delta values on the nuisance set's dataset."""
        ds = nu.dataset
        if self.constant is not None:
            return np.full(ds.n, float(self.constant))
        cov = ds.schema[self.covariate]
        if cov.kind == "continuous":
            raise ConfigError(f"delta cannot be indexed by continuous covariate {self.covariate!r}")
        col = ds.covariates[self.covariate]
        if cov.kind == "binary":
            keys = np.where(col == 1.0, "1", "0")
        else:
            keys = col
        out = np.empty(ds.n)
        seen = set()
        for lvl in np.unique(keys):
            lvl_s = str(lvl)
            if lvl_s not in self.table:
                raise ConfigError(f"delta table for {self.covariate!r} is missing level {lvl_s!r}")
            out[keys == lvl] = float(self.table[lvl_s])
            seen.add(lvl_s)
        return out

    def describe(self):
        """JSON-friendly snapshot for reports."""
        if self.constant is not None:
            return {"arm": self.arm, "constant": float(self.constant)}
        return {"arm": self.arm, "covariate": self.covariate, "table": dict(self.table)}


def as_delta(arm: str, spec) -> DeltaValue:
    """Coerce a raw float or (covariate, table) mapping into a DeltaValue."""
    if isinstance(spec, DeltaValue):
        if spec.arm != arm:
            raise ConfigError(f"DeltaValue is for arm {spec.arm!r}, expected {arm!r}")
        return spec
    if isinstance(spec, Mapping):
        return DeltaValue(arm, covariate=spec.get("covariate"), table=spec.get("table"))
    return DeltaValue(arm, constant=float(spec))


def check_delta(nu: NuisanceSet, arm: str, delta: DeltaValue) -> np.ndarray:
    """Validate the admissibility constraint on target rows; return per-row deltas."""
    vals = delta.values_for(nu)
    target = nu.dataset.s == 0
    prod = nu.m[arm] * vals
    bad = target & (prod > 1.0 + _INVARIANT_SLACK)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ConfigError(
            f"delta for arm {arm!r} is inadmissible: target row {i} has "
            f"m_hat*delta = {prod[i]:.6f} > 1"
        )
    return vals


@dataclass(frozen=True, eq=False)
class EstimateResult:
    """One point estimate plus, when available, its per-row influence values.

    ``influence`` is empty for the plug-in estimator (it is not asymptotically
    linear without the correction). ``outside_unit_interval`` flags raw
    points that left [0, 1]; values are never clipped.
    """

    estimand: str
    arm: str
    delta: object
    point: float
    influence: np.ndarray
    n1: int
    n0: int
    outside_unit_interval: bool = False
    metadata: dict = field(default_factory=dict)


def _mu_target(nu: NuisanceSet, arm: str, dvals: np.ndarray) -> np.ndarray:
    md = nu.m[arm] * dvals
    return nu.q1[arm] * md + nu.q0[arm] * (1.0 - md)


def _flag(point: float) -> bool:
    return bool(point < 0.0 or point > 1.0)


def gcomp_psi(nu: NuisanceSet, arm: str, delta) -> EstimateResult:
    """Plug-in standardization of the delta-shifted outcome mean over the target sample."""
    if arm not in nu.arms:
        raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    dv = as_delta(arm, delta)
    dvals = check_delta(nu, arm, dv)
    target = nu.dataset.s == 0
    point = float(np.mean(_mu_target(nu, arm, dvals)[target]))
    return EstimateResult(
        estimand="psi_G",
        arm=arm,
        delta=dv,
        point=point,
        influence=np.empty(0),
        n1=nu.dataset.n1,
        n0=nu.dataset.n0,
        outside_unit_interval=_flag(point),
    )


def _trial_summand(nu: NuisanceSet, arm: str, dvals: np.ndarray) -> np.ndarray:
    """Weighted residual contribution of each trial row in the given arm.

    Zero elsewhere. This is the summand before the 1/k_hat scaling shared
    by the one-step estimator and the influence curve.
    """
    ds = nu.dataset
    mask = (ds.s == 1) & (ds.a == arm)
    idx = np.flatnonzero(mask)
    out = np.zeros(ds.n)
    if idx.size == 0:
        return out
    z = ds.z[idx]
    y = ds.y[idx]
    d = dvals[idx]
    q1 = nu.q1[arm][idx]
    q0 = nu.q0[arm][idx]
    m = nu.m[arm][idx]
    g = nu.g[arm][idx]
    h = nu.h[idx]
    qz = np.where(z == 1.0, q1, q0)
    w_resid = z * d + (1.0 - z) * (1.0 - m * d) / (1.0 - m)
    core = w_resid * (y - qz) + d * (q1 - q0) * (z - m)
    out[idx] = core * (1.0 - h) / (h * g)
    return out


def eic_evaluate(nu: NuisanceSet, arm: str, delta, psi: float) -> np.ndarray:
    """Estimated influence curve of the transported mean, evaluated row-wise.

    Trial rows assigned to ``arm`` get the inverse-odds-weighted residual
    term; target rows get the centered standardization term
    ``(mu_hat - psi) / k_hat``; other rows contribute zero.
    """
    if arm not in nu.arms:
        raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    if not np.isfinite(psi):
        raise ValueError("psi must be finite")
    dv = as_delta(arm, delta)
    dvals = check_delta(nu, arm, dv)
    ds = nu.dataset
    target = ds.s == 0
    out = _trial_summand(nu, arm, dvals)
    out[target] = _mu_target(nu, arm, dvals)[target] - psi
    return out / nu.k_hat


def onestep_psi(nu: NuisanceSet, arm: str, delta) -> EstimateResult:
    """One-step estimator: the plug-in plus the mean estimated influence.

    Computed directly as the sum of trial weighted-residual and target
    standardization contributions over n0, which coincides with correcting
    the plug-in by the average influence curve.
    """
    if arm not in nu.arms:
        raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    dv = as_delta(arm, delta)
    dvals = check_delta(nu, arm, dv)
    ds = nu.dataset
    target = ds.s == 0
    summand = _trial_summand(nu, arm, dvals)
    summand[target] = _mu_target(nu, arm, dvals)[target]
    point = float(summand.sum() / ds.n0)
    influence = eic_evaluate(nu, arm, dv, point)
    return EstimateResult(
        estimand="psi_OS",
        arm=arm,
        delta=dv,
        point=point,
        influence=influence,
        n1=ds.n1,
        n0=ds.n0,
        outside_unit_interval=_flag(point),
    )


def _q_mix(nu: NuisanceSet, arm: str) -> np.ndarray:
    return nu.q1[arm] * nu.m[arm] + nu.q0[arm] * (1.0 - nu.m[arm])


def trial_onestep(nu: NuisanceSet, arm: str) -> EstimateResult:
    """One-step estimator of the trial-population mean outcome under ``arm``.

    Uses the adherence-mixed outcome prediction and inverse assignment
    weights within the trial sample only.
    """
    if arm not in nu.arms:
        raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    ds = nu.dataset
    trial = ds.s == 1
    in_arm = trial & (ds.a == arm)
    qmix = _q_mix(nu, arm)
    resid = np.zeros(ds.n)
    idx = np.flatnonzero(in_arm)
    resid[idx] = (ds.y[idx] - qmix[idx]) / nu.g[arm][idx]
    summand = resid + np.where(trial, qmix, 0.0)
    point = float(summand.sum() / ds.n1)
    k1 = ds.n1 / ds.n
    influence = resid.copy()
    influence[trial] += qmix[trial] - point
    influence /= k1
    return EstimateResult(
        estimand="theta_OS",
        arm=arm,
        delta=None,
        point=point,
        influence=influence,
        n1=ds.n1,
        n0=ds.n0,
        outside_unit_interval=_flag(point),
    )


def transport_onestep_setting1(nu: NuisanceSet, arm: str) -> EstimateResult:
    """One-step transported mean when target adherence equals trial adherence.

    This is the reference analysis the sensitivity parameter perturbs; it
    equals ``onestep_psi`` at ``delta == 1`` up to float rounding.
    """
    if arm not in nu.arms:
        raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    ds = nu.dataset
    target = ds.s == 0
    in_arm = (ds.s == 1) & (ds.a == arm)
    qmix = _q_mix(nu, arm)
    resid = np.zeros(ds.n)
    idx = np.flatnonzero(in_arm)
    h = nu.h[idx]
    resid[idx] = (ds.y[idx] - qmix[idx]) * (1.0 - h) / (h * nu.g[arm][idx])
    summand = resid + np.where(target, qmix, 0.0)
    point = float(summand.sum() / ds.n0)
    influence = resid.copy()
    influence[target] += qmix[target] - point
    influence /= nu.k_hat
    return EstimateResult(
        estimand="theta_prime_OS",
        arm=arm,
        delta=None,
        point=point,
        influence=influence,
        n1=ds.n1,
        n0=ds.n0,
        outside_unit_interval=_flag(point),
    )


def risk_difference(est1: EstimateResult, est0: EstimateResult) -> EstimateResult:
    """Contrast of two per-arm estimates of the same estimand (est1 minus est0)."""
    if est1.estimand != est0.estimand:
        raise ValueError(f"cannot contrast {est1.estimand} with {est0.estimand}")
    if est1.arm == est0.arm:
        raise ValueError(f"both estimates are for arm {est1.arm!r}")
    if (est1.n1, est1.n0) != (est0.n1, est0.n0):
        raise ValueError("estimates come from datasets of different sizes")
    if est1.influence.size and est0.influence.size:
        if est1.influence.shape != est0.influence.shape:
            raise ValueError("influence vectors have mismatched record counts")
        influence = est1.influence - est0.influence
    else:
        influence = np.empty(0)
    point = est1.point - est0.point
    return EstimateResult(
        estimand=f"{est1.estimand}:rd",
        arm=f"{est1.arm}-{est0.arm}",
        delta=(est1.delta, est0.delta),
        point=point,
        influence=influence,
        n1=est1.n1,
        n0=est1.n0,
        outside_unit_interval=bool(point < -1.0 or point > 1.0),
    )
