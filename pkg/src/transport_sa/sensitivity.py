"""Sensitivity-analysis workflows over the adherence ratio.

Three ways to vary the ratio ``delta``:

* a static grid of shared constants (``run_static_grid``), always anchored
  by the reference analysis in which target adherence equals trial
  adherence;
* interval bounds (``run_bounds``), exact because both estimators are
  affine in a constant delta, so extremes sit at interval endpoints;
* Monte Carlo draws from per-arm trapezoidal priors (``run_mc``), with
  percentile summaries and an optional random-error augmentation that
  widens simulation intervals by each draw's estimated standard error.

The Monte Carlo path never refits nuisances: delta enters only the
estimator, and for a constant delta both the point estimate and every
influence value are affine in delta, so two evaluations per arm determine
all draws exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import StudyDataset
from .estimators import (
    DeltaValue,
    EstimateResult,
    as_delta,
    check_delta,
    gcomp_psi,
    onestep_psi,
    risk_difference,
    transport_onestep_setting1,
    trial_onestep,
)
from .exceptions import ConfigError
from .inference import (
    bootstrap_replicates,
    eic_variance,
    sandwich_variance,
    sandwich_variance_contrast,
    wald_ci,
)
from .nuisance import NuisanceSet, crossfit_predictions, fit_nuisance_set, make_folds

_INVARIANT_SLACK = 1e-12


# -- trapezoidal priors ---------------------------------------------------------


@dataclass(frozen=True)
class TrapezoidDist:
    """Trapezoidal distribution with support [a, d] and plateau [b, c].

    Requires ``a <= b <= c <= d``. ``a == b`` or ``c == d`` drop the
    corresponding ramp; both at once give the uniform on [a, d]; all four
    equal is the explicit point mass at that value (a constant prior).
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self) -> None:
        a, b, c, d = (float(v) for v in (self.a, self.b, self.c, self.d))
        if not (np.isfinite([a, b, c, d]).all() and a <= b <= c <= d):
            raise ConfigError(f"trapezoid needs a <= b <= c <= d, got {(a, b, c, d)}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

    @property
    def degenerate(self) -> bool:
        return self.a == self.d

    @property
    def _height(self) -> float:
        # plateau density; total area integrates to one
        return 2.0 / (self.c + self.d - self.a - self.b)

    def mean(self) -> float:
        """Closed-form mean, with ramp-free limits handled exactly."""
        if self.degenerate:
            return self.a

        def cubic_ratio(hi: float, lo: float) -> float:
            if hi == lo:
                return 3.0 * hi * hi
            return (hi**3 - lo**3) / (hi - lo)

        return (cubic_ratio(self.d, self.c) - cubic_ratio(self.b, self.a)) / (
            3.0 * (self.c + self.d - self.a - self.b)
        )

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return np.where(x >= self.a, 1.0, 0.0)
        u = self._height
        a, b, c, d = self.a, self.b, self.c, self.d
        out = np.zeros_like(x)
        if b > a:
            on = (x > a) & (x < b)
            out = np.where(on, u * (x - a) ** 2 / (2.0 * (b - a)), out)
        p_b = u * (b - a) / 2.0
        on = (x >= b) & (x <= c)
        out = np.where(on, p_b + u * (x - b), out)
        if d > c:
            on = (x > c) & (x < d)
            out = np.where(on, 1.0 - u * (d - x) ** 2 / (2.0 * (d - c)), out)
        out = np.where(x >= d, 1.0, out)
        return out

    def icdf(self, p) -> np.ndarray:
        """Inverse CDF: square-root inversion on the ramps, linear on the plateau."""
        p = np.asarray(p, dtype=float)
        if (p < 0).any() or (p > 1).any():
            raise ValueError("probabilities must lie in [0, 1]")
        if self.degenerate:
            out = np.full_like(p, self.a)
            return out if out.shape else float(out)
        u = self._height
        a, b, c, d = self.a, self.b, self.c, self.d
        p_b = u * (b - a) / 2.0
        p_c = p_b + u * (c - b)
        left = a + np.sqrt(np.clip(2.0 * p * (b - a) / u, 0.0, None)) if b > a else np.full_like(p, b)
        mid = b + (p - p_b) / u
        right = d - np.sqrt(np.clip(2.0 * (1.0 - p) * (d - c) / u, 0.0, None)) if d > c else np.full_like(p, c)
        out = np.where(p <= p_b, left, np.where(p <= p_c, mid, right))
        return out if out.shape else float(out)


def sample_trapezoid(dist: TrapezoidDist, u) -> np.ndarray:
    """Map uniform(0, 1) draws through the trapezoid's inverse CDF."""
    return dist.icdf(u)


# -- scenarios and options -------------------------------------------------------


@dataclass(frozen=True)
class DeltaScenario:
    """What delta values an analysis should visit.

    ``grid`` is a list of constants shared by both arms (static grid);
    ``per_arm`` maps arm labels to interval tuples (bounds) or
    :class:`TrapezoidDist` priors (Monte Carlo). ``constraint`` restricts
    Monte Carlo summaries to draws satisfying delta[left] <= delta[right],
    given as an (left_arm, right_arm) pair, or any callable mapping
    {arm: draws array} to a boolean array. Constants, range endpoints, and
    trapezoid supports must stay within [0, delta_max]; raise ``delta_max``
    deliberately to explore ratios above one.
    """

    grid: tuple[float, ...] | None = None
    per_arm: Mapping[str, object] | None = None
    draws: int = 10000
    seed: int = 0
    constraint: object | None = None
    delta_max: float = 1.0

    def check_range(self, value: float, what: str) -> None:
        if not (np.isfinite(value) and 0.0 <= value <= self.delta_max):
            raise ConfigError(f"{what} must lie in [0, {self.delta_max:g}], got {value!r}")


@dataclass(frozen=True)
class AnalysisOptions:
    """Estimator/variance choices shared by the sensitivity workflows."""

    estimator: str = "onestep"
    engine: str = "eic"
    level: float = 0.95
    bootstrap_b: int = 500
    seed: int = 0
    threads: int | None = None
    referent: str | None = None
    include_reference: bool = True
    include_trial: bool = True

    def validated(self, nu: NuisanceSet) -> "AnalysisOptions":
        if self.estimator not in ("onestep", "gcomp"):
            raise ConfigError(f"estimator must be 'onestep' or 'gcomp', got {self.estimator!r}")
        if self.engine not in ("eic", "bootstrap", "sandwich"):
            raise ConfigError(f"variance engine must be eic, bootstrap, or sandwich, got {self.engine!r}")
        if self.estimator == "gcomp" and self.engine == "eic":
            raise ConfigError("the plug-in estimator has no influence curve; choose bootstrap or sandwich")
        if self.engine == "sandwich" and nu.crossfit:
            raise ConfigError("sandwich variance is incompatible with cross-fit nuisances")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"confidence level must be in (0, 1), got {self.level}")
        referent = self.referent if self.referent is not None else nu.arms[0]
        if referent not in nu.arms:
            raise ConfigError(f"referent {referent!r} is not a dataset arm {list(nu.arms)}")
        opts = self if self.referent == referent else AnalysisOptions(
            estimator=self.estimator,
            engine=self.engine,
            level=self.level,
            bootstrap_b=self.bootstrap_b,
            seed=self.seed,
            threads=self.threads,
            referent=referent,
            include_reference=self.include_reference,
            include_trial=self.include_trial,
        )
        return opts


@dataclass(frozen=True)
class GridRow:
    """One report line: a point estimate with its interval and provenance."""

    block: str
    delta_label: str
    arm: str
    estimand: str
    point: float
    variance: float
    se: float
    lower: float
    upper: float
    method: str
    outside_unit_interval: bool
    delta: object = None


def _refitter(nu: NuisanceSet, fold_seed: int) -> Callable[[StudyDataset], NuisanceSet]:
    """Rebuild the nuisance pipeline (same designs, truncation, fitting mode)."""
    designs = dict(nu.designs)
    trunc = nu.truncation
    if nu.crossfit:
        k = nu.folds.k

        def refit(ds: StudyDataset) -> NuisanceSet:
            return crossfit_predictions(ds, make_folds(ds, k, fold_seed), trunc, designs)

    else:

        def refit(ds: StudyDataset) -> NuisanceSet:
            return fit_nuisance_set(ds, trunc, designs)

    return refit


def _block_estimates(nu: NuisanceSet, block: str, per_arm: Mapping[str, object] | None,
                     estimator: str, referent: str) -> dict[str, EstimateResult]:
    """Point estimates for one report block: each arm plus the contrast."""
    other = nu.arms[1] if referent == nu.arms[0] else nu.arms[0]
    out: dict[str, EstimateResult] = {}
    for arm in nu.arms:
        if block == "trial":
            out[arm] = trial_onestep(nu, arm)
        elif block == "reference":
            if estimator == "onestep":
                out[arm] = transport_onestep_setting1(nu, arm)
            else:
                out[arm] = gcomp_psi(nu, arm, 1.0)
        else:
            fn = onestep_psi if estimator == "onestep" else gcomp_psi
            out[arm] = fn(nu, arm, per_arm[arm])
    out["rd"] = risk_difference(out[other], out[referent])
    return out


def _row_from(block: str, label: str, arm_key: str, est: EstimateResult,
              variance: float, method: str, level: float) -> GridRow:
    ci = wald_ci(est.point, variance, level)
    snapshot = None
    if isinstance(est.delta, DeltaValue):
        snapshot = est.delta.describe()
    elif isinstance(est.delta, tuple):
        snapshot = [d.describe() if isinstance(d, DeltaValue) else None for d in est.delta]
    return GridRow(
        block=block,
        delta_label=label,
        arm=est.arm if arm_key == "rd" else arm_key,
        estimand=est.estimand,
        point=est.point,
        variance=float(variance),
        se=ci.se,
        lower=ci.lower,
        upper=ci.upper,
        method=method,
        outside_unit_interval=est.outside_unit_interval,
        delta=snapshot,
    )


def evaluate_blocks(
    ds: StudyDataset,
    nu: NuisanceSet,
    blocks: Sequence[tuple[str, str, Mapping[str, object] | None]],
    options: AnalysisOptions,
) -> list[GridRow]:
    """Turn (block kind, label, per-arm delta) specs into finished report rows.

    The trial block always uses the influence-curve variance; transported
    blocks use the configured engine. With the bootstrap engine every
    transported quantity is recomputed on each resample in one pass, so all
    quantities share replicate datasets.
    """
    opts = options.validated(nu)
    referent = opts.referent
    other = nu.arms[1] if referent == nu.arms[0] else nu.arms[0]
    arm_order = (*nu.arms, "rd")

    estimates: dict[tuple[str, str], dict[str, EstimateResult]] = {}
    for kind, label, per_arm in blocks:
        estimates[(kind, label)] = _block_estimates(nu, kind, per_arm, opts.estimator, referent)

    transported = [(k, l, p) for k, l, p in blocks if k != "trial"]
    boot_var: dict[tuple[str, str, str], float] = {}
    if opts.engine == "bootstrap" and transported:
        refit = _refitter(nu, opts.seed)

        def fn(ds_b: StudyDataset) -> np.ndarray:
            nu_b = refit(ds_b)
            vals = []
            for kind, label, per_arm in transported:
                ests = _block_estimates(nu_b, kind, per_arm, opts.estimator, referent)
                vals.extend(ests[key].point for key in arm_order)
            return np.asarray(vals)

        if opts.bootstrap_b < 50:
            raise ConfigError(f"need at least 50 bootstrap replicates, got {opts.bootstrap_b}")
        reps, _failed = bootstrap_replicates(
            ds, fn, opts.bootstrap_b, opts.seed, threads=opts.threads
        )
        col = 0
        for kind, label, _ in transported:
            for key in arm_order:
                boot_var[(kind, label, key)] = float(np.var(reps[:, col], ddof=1))
                col += 1

    rows: list[GridRow] = []
    for kind, label, per_arm in blocks:
        ests = estimates[(kind, label)]
        for key in arm_order:
            est = ests[key]
            if kind == "trial" or opts.engine == "eic":
                var = eic_variance(est).variance
                method = "eic"
            elif opts.engine == "bootstrap":
                var = boot_var[(kind, label, key)]
                method = "bootstrap"
            else:
                dval = 1.0 if kind == "reference" else None
                if key == "rd":
                    d_o = dval if dval is not None else per_arm[other]
                    d_r = dval if dval is not None else per_arm[referent]
                    var = sandwich_variance_contrast(
                        ds, nu, other, referent, d_o, d_r, which=opts.estimator
                    ).variance
                else:
                    d_a = dval if dval is not None else per_arm[key]
                    var = sandwich_variance(ds, nu, key, d_a, which=opts.estimator).variance
                method = "sandwich"
            rows.append(_row_from(kind, label, key, est, var, method, opts.level))
    return rows


def run_static_grid(
    ds: StudyDataset,
    nu: NuisanceSet,
    scenario: DeltaScenario,
    options: AnalysisOptions | None = None,
) -> list[GridRow]:
    """Estimates at each shared grid constant, plus trial and reference anchors.

    Every grid constant applies to both arms at once. The reference block
    (equal adherence, i.e. delta of one) is included unless switched off in
    the options; it is the natural zero point of the sensitivity analysis.
    """
    opts = (options or AnalysisOptions()).validated(nu)
    if scenario.grid is None or len(scenario.grid) == 0:
        raise ConfigError("a static grid scenario needs a non-empty list of delta constants")
    blocks: list[tuple[str, str, Mapping[str, object] | None]] = []
    if opts.include_trial:
        blocks.append(("trial", "trial", None))
    if opts.include_reference:
        blocks.append(("reference", "reference", None))
    for const in scenario.grid:
        c = float(const)
        scenario.check_range(c, "grid delta")
        blocks.append(("delta", f"{c:g}", {arm: c for arm in nu.arms}))
    return evaluate_blocks(ds, nu, blocks, opts)


# -- bounds ----------------------------------------------------------------------


@dataclass(frozen=True)
class ArmBounds:
    arm: str
    delta_lo: float
    delta_hi: float
    lower: float
    upper: float
    delta_at_lower: float
    delta_at_upper: float


@dataclass(frozen=True)
class RdBounds:
    arms: str
    lower: float
    upper: float
    deltas_at_lower: tuple[float, float]
    deltas_at_upper: tuple[float, float]


@dataclass(frozen=True)
class BoundsResult:
    per_arm: Mapping[str, ArmBounds]
    rd: RdBounds
    estimator: str


def run_bounds(
    ds: StudyDataset,
    nu: NuisanceSet,
    scenario: DeltaScenario,
    options: AnalysisOptions | None = None,
) -> BoundsResult:
    """Exact estimate bounds over per-arm delta intervals.

    Both estimators are affine in a constant delta, so each arm's extremes
    occur at its interval endpoints, and contrast extremes at one of the
    four endpoint combinations. Degenerate intervals are allowed and give
    width-zero bounds.
    """
    opts = (options or AnalysisOptions()).validated(nu)
    if not scenario.per_arm:
        raise ConfigError("a bounds scenario needs per-arm delta intervals")
    missing = set(nu.arms) - set(scenario.per_arm)
    if missing:
        raise ConfigError(f"bounds scenario is missing arms {sorted(missing)}")
    fn = onestep_psi if opts.estimator == "onestep" else gcomp_psi

    endpoint_values: dict[str, dict[float, float]] = {}
    per_arm: dict[str, ArmBounds] = {}
    intervals: dict[str, tuple[float, float]] = {}
    for arm in nu.arms:
        spec = scenario.per_arm[arm]
        try:
            lo, hi = (float(spec[0]), float(spec[1]))
        except (TypeError, IndexError, ValueError) as exc:
            raise ConfigError(f"bounds for arm {arm!r} must be a (low, high) pair, got {spec!r}") from exc
        if not lo <= hi:
            raise ConfigError(f"bounds for arm {arm!r} must satisfy low <= high")
        scenario.check_range(lo, f"lower bound for arm {arm!r}")
        scenario.check_range(hi, f"upper bound for arm {arm!r}")
        intervals[arm] = (lo, hi)
        vals = {d: fn(nu, arm, d).point for d in {lo, hi}}
        endpoint_values[arm] = vals
        d_min = min(vals, key=vals.get)
        d_max = max(vals, key=vals.get)
        per_arm[arm] = ArmBounds(
            arm=arm,
            delta_lo=lo,
            delta_hi=hi,
            lower=vals[d_min],
            upper=vals[d_max],
            delta_at_lower=d_min,
            delta_at_upper=d_max,
        )

    referent = opts.referent
    other = nu.arms[1] if referent == nu.arms[0] else nu.arms[0]
    combos = {}
    for d_o in set(intervals[other]):
        for d_r in set(intervals[referent]):
            combos[(d_o, d_r)] = endpoint_values[other][d_o] - endpoint_values[referent][d_r]
    pair_min = min(combos, key=combos.get)
    pair_max = max(combos, key=combos.get)
    rd = RdBounds(
        arms=f"{other}-{referent}",
        lower=combos[pair_min],
        upper=combos[pair_max],
        deltas_at_lower=pair_min,
        deltas_at_upper=pair_max,
    )
    return BoundsResult(per_arm=per_arm, rd=rd, estimator=opts.estimator)


# -- Monte Carlo -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class McResult:
    """Raw per-draw table from a Monte Carlo sensitivity run.

    Augmentation normals are pre-drawn on their own substream for every
    draw and quantity, so toggling the augmentation or the constraint never
    changes the delta draws themselves.
    """

    referent: str
    other: str
    seed: int
    n_draws: int
    delta: Mapping[str, np.ndarray]
    psi: Mapping[str, np.ndarray]
    se: Mapping[str, np.ndarray]
    rd: np.ndarray
    se_rd: np.ndarray
    valid: np.ndarray
    augment_z: Mapping[str, np.ndarray]
    constraint: object | None
    n_invalid: int


def _affine_pieces(nu: NuisanceSet, arm: str):
    r0 = onestep_psi(nu, arm, 0.0)
    r1 = onestep_psi(nu, arm, 1.0)
    return r0.point, r1.point - r0.point, r0.influence, r1.influence - r0.influence


def run_mc(
    ds: StudyDataset,
    nu: NuisanceSet,
    scenario: DeltaScenario,
    options: AnalysisOptions | None = None,
) -> McResult:
    """Draw per-arm deltas from trapezoidal priors and evaluate every draw.

    Each arm's uniforms come from an independent substream of the scenario
    seed (substreams ordered by sorted arm label, with a third reserved for
    the augmentation normals). Nuisances are fit once: the one-step point
    and influence values are affine in constant delta, so each draw's
    estimate and standard error are exact linear/quadratic forms in the
    two per-arm anchor evaluations at delta zero and one.

    Draws where some arm's delta is inadmissible against fitted adherence
    are flagged invalid rather than fatal, up to 5 percent of draws.
    """
    opts = (options or AnalysisOptions()).validated(nu)
    if opts.estimator != "onestep":
        raise ConfigError("Monte Carlo summaries need draw-level standard errors; use the onestep estimator")
    if not scenario.per_arm:
        raise ConfigError("a Monte Carlo scenario needs per-arm trapezoid priors")
    missing = set(nu.arms) - set(scenario.per_arm)
    if missing:
        raise ConfigError(f"Monte Carlo scenario is missing arms {sorted(missing)}")
    for arm in nu.arms:
        dist = scenario.per_arm[arm]
        if not isinstance(dist, TrapezoidDist):
            raise ConfigError(f"per-arm prior for {arm!r} must be a TrapezoidDist")
        scenario.check_range(dist.a, f"trapezoid minimum for arm {arm!r}")
        scenario.check_range(dist.d, f"trapezoid maximum for arm {arm!r}")
    if scenario.draws < 100:
        raise ConfigError(f"need at least 100 draws, got {scenario.draws}")

    referent = opts.referent
    other = nu.arms[1] if referent == nu.arms[0] else nu.arms[0]
    n = ds.n
    streams = np.random.SeedSequence(scenario.seed).spawn(3)
    arm_stream = {arm: np.random.default_rng(streams[i]) for i, arm in enumerate(nu.arms)}
    aug_rng = np.random.default_rng(streams[2])

    delta: dict[str, np.ndarray] = {}
    for arm in nu.arms:
        u = arm_stream[arm].random(scenario.draws)
        delta[arm] = sample_trapezoid(scenario.per_arm[arm], u)
    augment_z = {arm: aug_rng.standard_normal(scenario.draws) for arm in nu.arms}
    augment_z["rd"] = aug_rng.standard_normal(scenario.draws)

    target = ds.s == 0
    valid = np.ones(scenario.draws, dtype=bool)
    base: dict[str, float] = {}
    slope: dict[str, float] = {}
    infl0: dict[str, np.ndarray] = {}
    infl_slope: dict[str, np.ndarray] = {}
    for arm in nu.arms:
        m_max = float(nu.m[arm][target].max())
        valid &= delta[arm] * m_max <= 1.0 + _INVARIANT_SLACK
        valid &= delta[arm] >= 0.0
        base[arm], slope[arm], infl0[arm], infl_slope[arm] = _affine_pieces(nu, arm)
    n_invalid = int((~valid).sum())
    if n_invalid > 0.05 * scenario.draws:
        raise ConfigError(
            f"{n_invalid} of {scenario.draws} draws violate the adherence bound "
            f"m_hat*delta <= 1; tighten the priors"
        )

    psi: dict[str, np.ndarray] = {}
    se: dict[str, np.ndarray] = {}
    for arm in nu.arms:
        psi[arm] = base[arm] + delta[arm] * slope[arm]
        cov = np.cov(np.vstack([infl0[arm], infl_slope[arm]]), ddof=1)
        var = cov[0, 0] + 2.0 * delta[arm] * cov[0, 1] + delta[arm] ** 2 * cov[1, 1]
        se[arm] = np.sqrt(np.clip(var, 0.0, None) / n)

    rd = psi[other] - psi[referent]
    c4 = np.cov(np.vstack([infl0[other], infl_slope[other], infl0[referent], infl_slope[referent]]), ddof=1)
    d_o, d_r = delta[other], delta[referent]
    var_rd = (
        c4[0, 0]
        + d_o**2 * c4[1, 1]
        + c4[2, 2]
        + d_r**2 * c4[3, 3]
        + 2.0 * d_o * c4[0, 1]
        - 2.0 * c4[0, 2]
        - 2.0 * d_r * c4[0, 3]
        - 2.0 * d_o * c4[1, 2]
        - 2.0 * d_o * d_r * c4[1, 3]
        + 2.0 * d_r * c4[2, 3]
    )
    se_rd = np.sqrt(np.clip(var_rd, 0.0, None) / n)

    return McResult(
        referent=referent,
        other=other,
        seed=scenario.seed,
        n_draws=scenario.draws,
        delta=delta,
        psi=psi,
        se=se,
        rd=rd,
        se_rd=se_rd,
        valid=valid,
        augment_z=augment_z,
        constraint=scenario.constraint,
        n_invalid=n_invalid,
    )


@dataclass(frozen=True)
class McSummary:
    """Percentile summaries of a Monte Carlo run.

    ``overall`` covers all valid draws; ``constrained`` (with
    ``subset_size``) covers the draws that also satisfy the constraint,
    when one is set. Each entry is (median, 2.5th, 97.5th percentile).
    """

    se_augment: bool
    n_draws: int
    n_valid: int
    quantities: tuple[str, ...]
    overall: Mapping[str, tuple[float, float, float]]
    constrained: Mapping[str, tuple[float, float, float]] | None
    subset_size: int | None
    constraint_label: str | None


def _constraint_mask(mc: McResult, constraint) -> tuple[np.ndarray | None, str | None]:
    if constraint is None:
        return None, None
    if callable(constraint):
        mask = np.asarray(constraint(dict(mc.delta)), dtype=bool)
        if mask.shape != (mc.n_draws,):
            raise ConfigError("constraint callable must return one boolean per draw")
        return mask, "custom"
    try:
        left, right = constraint
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"constraint must be a (left_arm, right_arm) pair, got {constraint!r}") from exc
    for arm in (left, right):
        if arm not in mc.delta:
            raise ConfigError(f"constraint names unknown arm {arm!r}")
    return mc.delta[left] <= mc.delta[right], f"delta[{left}] <= delta[{right}]"


def summarize_mc(mc: McResult, se_augment: bool = False, constraint=None) -> McSummary:
    """Median and 2.5/97.5 percentile summaries per quantity.

    With ``se_augment`` each point estimate gets an independent centered
    normal draw with that draw's standard error subtracted before the
    percentiles, propagating estimation error into the simulation
    intervals. Percentiles use linear interpolation between order
    statistics.
    """
    mask, label = _constraint_mask(mc, mc.constraint if constraint is None else constraint)
    quantities = [f"psi[{arm}]" for arm in sorted(mc.delta)] + ["rd"]

    def values(q: str) -> np.ndarray:
        if q == "rd":
            pts, ses, zs = mc.rd, mc.se_rd, mc.augment_z["rd"]
        else:
            arm = q[4:-1]
            pts, ses, zs = mc.psi[arm], mc.se[arm], mc.augment_z[arm]
        return pts - zs * ses if se_augment else pts

    def block(keep: np.ndarray) -> dict[str, tuple[float, float, float]]:
        out = {}
        for q in quantities:
            vals = values(q)[keep]
            med, lo, hi = np.percentile(vals, [50.0, 2.5, 97.5])
            out[q] = (float(med), float(lo), float(hi))
        return out

    valid = mc.valid
    if not valid.any():
        raise ConfigError("no valid draws to summarize")
    overall = block(valid)
    constrained = None
    subset_size = None
    if mask is not None:
        keep = valid & mask
        subset_size = int(keep.sum())
        if subset_size == 0:
            raise ConfigError("the constraint excludes every valid draw")
        constrained = block(keep)
    return McSummary(
        se_augment=se_augment,
        n_draws=mc.n_draws,
        n_valid=int(valid.sum()),
        quantities=tuple(quantities),
        overall=overall,
        constrained=constrained,
        subset_size=subset_size,
        constraint_label=label,
    )


# -- adherence audit ---------------------------------------------------------------


@dataclass(frozen=True)
class AdherenceSummary:
    """Distribution of predicted target-population adherence under one delta."""

    arm: str
    delta: object
    mean: float
    median: float
    q1: float
    q3: float


def predicted_adherence_under_delta(nu: NuisanceSet, arm: str, delta) -> AdherenceSummary:
    """Summaries of ``m_hat * delta`` over target rows.

    For a constant delta the summaries are the delta equal to one summaries
    scaled by delta: scaling a nonnegative constant commutes exactly with
    the mean and with order statistics, so linearity holds to the last bit.
    """
    if arm not in nu.arms:
        raise ConfigError(f"unknown arm {arm!r}; dataset arms are {list(nu.arms)}")
    dv = as_delta(arm, delta)
    check_delta(nu, arm, dv)
    target = nu.dataset.s == 0
    m_target = nu.m[arm][target]
    if dv.constant is not None:
        q1, med, q3 = np.percentile(m_target, [25.0, 50.0, 75.0])
        c = float(dv.constant)
        return AdherenceSummary(
            arm=arm,
            delta=dv.describe(),
            mean=c * float(np.mean(m_target)),
            median=c * float(med),
            q1=c * float(q1),
            q3=c * float(q3),
        )
    vals = m_target * dv.values_for(nu)[target]
    q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
    return AdherenceSummary(
        arm=arm,
        delta=dv.describe(),
        mean=float(np.mean(vals)),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
    )
