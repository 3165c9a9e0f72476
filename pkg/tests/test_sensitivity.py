"""Trapezoid priors, delta grids, bounds, Monte Carlo, adherence audit."""

import numpy as np
import pytest
from scipy import integrate

from transport_sa import (
    AnalysisOptions,
    ConfigError,
    DeltaScenario,
    TrapezoidDist,
    fit_nuisance_set,
    gcomp_psi,
    onestep_psi,
    predicted_adherence_under_delta,
    run_bounds,
    run_mc,
    run_static_grid,
    sample_trapezoid,
    summarize_mc,
    eic_variance,
)
from transport_sa.sensitivity import McResult

PAPER_TRAP_0 = TrapezoidDist(0.5, 0.6, 0.75, 1.0)
PAPER_TRAP_1 = TrapezoidDist(0.5, 0.75, 0.9, 1.0)


@pytest.fixture(scope="module")
def nu_exact(exact_ds):
    return fit_nuisance_set(exact_ds)


@pytest.fixture(scope="module")
def nu_crooked(crooked_ds):
    return fit_nuisance_set(crooked_ds)


def trapezoid_pdf(t: TrapezoidDist):
    u = 2.0 / (t.c + t.d - t.a - t.b)

    def pdf(x):
        if t.a < x < t.b:
            return u * (x - t.a) / (t.b - t.a)
        if t.b <= x <= t.c:
            return u
        if t.c < x < t.d:
            return u * (t.d - x) / (t.d - t.c)
        return 0.0

    return pdf


class TestTrapezoidDist:
    def test_ordering_enforced(self):
        with pytest.raises(ConfigError, match="a <= b <= c <= d"):
            TrapezoidDist(0.5, 0.4, 0.75, 1.0)
        with pytest.raises(ConfigError, match="a <= b <= c <= d"):
            TrapezoidDist(0.0, 0.2, 0.1, 1.0)
        with pytest.raises(ConfigError, match="a <= b <= c <= d"):
            TrapezoidDist(0.0, 0.2, 0.4, float("nan"))

    def test_closed_form_means(self):
        assert PAPER_TRAP_0.mean() == pytest.approx(1.4025 / 1.95, abs=1e-15)
        assert PAPER_TRAP_1.mean() == pytest.approx(1.5225 / 1.95, abs=1e-15)

    def test_mean_matches_numeric_integration(self):
        for t in (PAPER_TRAP_0, PAPER_TRAP_1, TrapezoidDist(0.1, 0.1, 0.4, 0.9)):
            pdf = trapezoid_pdf(t)
            mass, _ = integrate.quad(pdf, t.a, t.d)
            mean, _ = integrate.quad(lambda x: x * pdf(x), t.a, t.d)
            assert mass == pytest.approx(1.0, abs=1e-10)
            assert t.mean() == pytest.approx(mean, abs=1e-10)

    def test_uniform_special_case(self):
        u = TrapezoidDist(0.0, 0.0, 1.0, 1.0)
        assert u.mean() == pytest.approx(0.5, abs=1e-15)
        p = np.linspace(0.0, 1.0, 11)
        assert np.allclose(u.icdf(p), p, atol=1e-15)
        assert np.allclose(u.cdf(p), p, atol=1e-15)

    def test_triangular_special_case(self):
        tri = TrapezoidDist(0.0, 0.5, 0.5, 1.0)
        assert tri.mean() == pytest.approx(0.5, abs=1e-15)
        assert tri.icdf(0.5) == pytest.approx(0.5, abs=1e-12)
        assert tri.cdf(0.25) == pytest.approx(0.125, abs=1e-12)

    def test_icdf_cdf_round_trip(self):
        rng = np.random.default_rng(0)
        p = rng.random(200)
        for t in (PAPER_TRAP_0, PAPER_TRAP_1, TrapezoidDist(0.2, 0.2, 0.9, 0.9)):
            x = t.icdf(p)
            assert np.max(np.abs(t.cdf(x) - p)) <= 1e-12
        assert PAPER_TRAP_0.icdf(0.0) == PAPER_TRAP_0.a
        assert PAPER_TRAP_0.icdf(1.0) == PAPER_TRAP_0.d

    def test_icdf_rejects_bad_probabilities(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            PAPER_TRAP_0.icdf(1.5)

    def test_point_mass(self):
        pt = TrapezoidDist(0.7, 0.7, 0.7, 0.7)
        assert pt.degenerate
        assert pt.mean() == 0.7
        assert np.array_equal(pt.cdf([0.6, 0.7, 0.8]), [0.0, 1.0, 1.0])
        assert np.all(sample_trapezoid(pt, np.array([0.0, 0.4, 1.0])) == 0.7)

    def test_sampled_draws_match_cdf(self):
        # Kolmogorov-Smirnov against the analytic CDF at the 1% level
        n = 100000
        u = np.random.default_rng(42).random(n)
        x = np.sort(sample_trapezoid(PAPER_TRAP_1, u))
        grid = np.arange(1, n + 1) / n
        F = PAPER_TRAP_1.cdf(x)
        d_stat = max(np.max(np.abs(grid - F)), np.max(np.abs(grid - 1.0 / n - F)))
        assert d_stat <= 1.628 / np.sqrt(n)


class TestDeltaScenario:
    def test_check_range(self):
        sc = DeltaScenario(grid=(0.5,))
        sc.check_range(1.0, "grid delta")
        with pytest.raises(ConfigError, match=r"grid delta must lie in \[0, 1\]"):
            sc.check_range(1.2, "grid delta")
        wide = DeltaScenario(grid=(0.5,), delta_max=2.0)
        wide.check_range(1.2, "grid delta")
        with pytest.raises(ConfigError, match=r"\[0, 2\]"):
            wide.check_range(2.5, "grid delta")


class TestAnalysisOptions:
    def test_validation(self, nu_exact):
        with pytest.raises(ConfigError, match="estimator must be"):
            AnalysisOptions(estimator="tmle").validated(nu_exact)
        with pytest.raises(ConfigError, match="variance engine"):
            AnalysisOptions(engine="jackknife").validated(nu_exact)
        with pytest.raises(ConfigError, match="no influence curve"):
            AnalysisOptions(estimator="gcomp", engine="eic").validated(nu_exact)
        with pytest.raises(ConfigError, match="confidence level"):
            AnalysisOptions(level=1.0).validated(nu_exact)
        with pytest.raises(ConfigError, match="not a dataset arm"):
            AnalysisOptions(referent="x").validated(nu_exact)
        assert AnalysisOptions().validated(nu_exact).referent == "0"


class TestStaticGrid:
    def test_row_layout(self, exact_ds, nu_exact):
        rows = run_static_grid(exact_ds, nu_exact, DeltaScenario(grid=(0.5, 0.75)))
        blocks = [(r.block, r.delta_label, r.arm) for r in rows]
        # trial + reference + two grid points, three rows each, arms then rd
        assert len(rows) == 4 * 3
        assert blocks[0] == ("trial", "trial", "0")
        assert blocks[2] == ("trial", "trial", "1-0")
        assert blocks[6] == ("delta", "0.5", "0")
        assert {r.method for r in rows} == {"eic"}
        for r in rows:
            assert r.lower <= r.point <= r.upper
            assert r.se == pytest.approx(np.sqrt(r.variance), abs=1e-15)

    def test_exact_points_and_delta_snapshots(self, exact_ds, nu_exact):
        rows = run_static_grid(exact_ds, nu_exact, DeltaScenario(grid=(0.5,)))
        by = {(r.block, r.arm): r for r in rows}
        assert by[("delta", "1")].point == pytest.approx(0.66, abs=1e-9)
        assert by[("delta", "0")].point == pytest.approx(0.515, abs=1e-9)
        assert by[("delta", "1-0")].point == pytest.approx(0.145, abs=1e-9)
        assert by[("delta", "1")].delta == {"arm": "1", "constant": 0.5}
        assert by[("reference", "1")].point == pytest.approx(0.52, abs=1e-9)
        assert by[("trial", "1")].point == pytest.approx(0.492, abs=1e-9)

    def test_grid_at_one_equals_reference(self, crooked_ds, nu_crooked):
        rows = run_static_grid(crooked_ds, nu_crooked, DeltaScenario(grid=(1.0,)))
        by = {(r.block, r.arm): r for r in rows}
        for arm in ("0", "1", by[("reference", "1-0")].arm):
            ref = by[("reference", arm)]
            hit = by[("delta", arm)]
            assert abs(ref.point - hit.point) <= 1e-12

    def test_include_flags(self, exact_ds, nu_exact):
        rows = run_static_grid(
            exact_ds,
            nu_exact,
            DeltaScenario(grid=(0.5,)),
            AnalysisOptions(include_trial=False, include_reference=False),
        )
        assert {r.block for r in rows} == {"delta"}

    def test_referent_controls_contrast_direction(self, exact_ds, nu_exact):
        rows = run_static_grid(
            exact_ds, nu_exact, DeltaScenario(grid=(0.5,)), AnalysisOptions(referent="1")
        )
        rd = [r for r in rows if r.block == "delta" and r.estimand.endswith("rd")][0]
        assert rd.arm == "0-1"
        assert rd.point == pytest.approx(0.515 - 0.66, abs=1e-9)

    def test_empty_grid_rejected(self, exact_ds, nu_exact):
        with pytest.raises(ConfigError, match="non-empty list"):
            run_static_grid(exact_ds, nu_exact, DeltaScenario(grid=()))

    def test_grid_above_delta_max_rejected(self, exact_ds, nu_exact):
        with pytest.raises(ConfigError, match="grid delta"):
            run_static_grid(exact_ds, nu_exact, DeltaScenario(grid=(1.3,)))

    def test_gcomp_needs_non_eic_engine(self, exact_ds, nu_exact):
        with pytest.raises(ConfigError, match="no influence curve"):
            run_static_grid(
                exact_ds, nu_exact, DeltaScenario(grid=(0.5,)), AnalysisOptions(estimator="gcomp")
            )

    def test_sandwich_engine_keeps_trial_rows_on_eic(self, exact_ds, nu_exact):
        rows = run_static_grid(
            exact_ds,
            nu_exact,
            DeltaScenario(grid=(0.5,)),
            AnalysisOptions(engine="sandwich"),
        )
        methods = {(r.block, r.method) for r in rows}
        assert ("trial", "eic") in methods
        assert ("delta", "sandwich") in methods and ("reference", "sandwich") in methods

    def test_bootstrap_engine_deterministic(self, exact_ds, nu_exact):
        opts = AnalysisOptions(engine="bootstrap", bootstrap_b=50, seed=9, include_trial=False)
        r1 = run_static_grid(exact_ds, nu_exact, DeltaScenario(grid=(0.5,)), opts)
        r2 = run_static_grid(exact_ds, nu_exact, DeltaScenario(grid=(0.5,)), opts)
        assert [(r.point, r.variance) for r in r1] == [(r.point, r.variance) for r in r2]
        assert all(r.method == "bootstrap" for r in r1)
        assert all(r.variance > 0.0 for r in r1)

    def test_bootstrap_b_floor(self, exact_ds, nu_exact):
        with pytest.raises(ConfigError, match="at least 50"):
            run_static_grid(
                exact_ds,
                nu_exact,
                DeltaScenario(grid=(0.5,)),
                AnalysisOptions(engine="bootstrap", bootstrap_b=10),
            )


class TestBounds:
    def test_endpoints_attain_extremes(self, exact_ds, nu_exact):
        res = run_bounds(
            exact_ds, nu_exact, DeltaScenario(per_arm={"1": (0.5, 1.0), "0": (0.75, 1.0)})
        )
        b1 = res.per_arm["1"]
        # psi(1, delta) rises as delta falls (q0 > q1 here): max at 0.5
        assert b1.lower == pytest.approx(0.52, abs=1e-9)
        assert b1.upper == pytest.approx(0.66, abs=1e-9)
        assert b1.delta_at_lower == 1.0 and b1.delta_at_upper == 0.5
        assert {b1.delta_lo, b1.delta_hi} == {0.5, 1.0}

    def test_interval_evaluations_stay_inside(self, crooked_ds, nu_crooked):
        res = run_bounds(
            crooked_ds, nu_crooked, DeltaScenario(per_arm={"1": (0.2, 0.9), "0": (0.4, 1.0)})
        )
        for arm, (lo, hi) in (("1", (0.2, 0.9)), ("0", (0.4, 1.0))):
            for d in np.linspace(lo, hi, 7):
                p = onestep_psi(nu_crooked, arm, float(d)).point
                assert res.per_arm[arm].lower - 1e-12 <= p <= res.per_arm[arm].upper + 1e-12

    def test_rd_scans_endpoint_combinations(self, exact_ds, nu_exact):
        res = run_bounds(
            exact_ds, nu_exact, DeltaScenario(per_arm={"1": (0.5, 1.0), "0": (0.5, 1.0)})
        )
        vals = {}
        for d1 in (0.5, 1.0):
            for d0 in (0.5, 1.0):
                vals[(d1, d0)] = (
                    onestep_psi(nu_exact, "1", d1).point - onestep_psi(nu_exact, "0", d0).point
                )
        assert res.rd.arms == "1-0"
        assert res.rd.lower == pytest.approx(min(vals.values()), abs=1e-12)
        assert res.rd.upper == pytest.approx(max(vals.values()), abs=1e-12)
        assert vals[res.rd.deltas_at_lower] == pytest.approx(res.rd.lower, abs=1e-12)
        assert vals[res.rd.deltas_at_upper] == pytest.approx(res.rd.upper, abs=1e-12)

    def test_degenerate_interval(self, exact_ds, nu_exact):
        res = run_bounds(
            exact_ds, nu_exact, DeltaScenario(per_arm={"1": (0.75, 0.75), "0": (1.0, 1.0)})
        )
        assert res.per_arm["1"].lower == res.per_arm["1"].upper
        assert res.per_arm["1"].lower == pytest.approx(0.59, abs=1e-9)
        assert res.rd.lower == res.rd.upper

    def test_gcomp_estimator_used_when_asked(self, crooked_ds, nu_crooked):
        res = run_bounds(
            crooked_ds,
            nu_crooked,
            DeltaScenario(per_arm={"1": (0.4, 0.8), "0": (0.4, 0.8)}),
            AnalysisOptions(estimator="gcomp", engine="sandwich"),
        )
        assert res.estimator == "gcomp"
        want = sorted([gcomp_psi(nu_crooked, "1", 0.4).point, gcomp_psi(nu_crooked, "1", 0.8).point])
        assert res.per_arm["1"].lower == pytest.approx(want[0], abs=1e-12)
        assert res.per_arm["1"].upper == pytest.approx(want[1], abs=1e-12)

    def test_scenario_validation(self, exact_ds, nu_exact):
        with pytest.raises(ConfigError, match="per-arm delta intervals"):
            run_bounds(exact_ds, nu_exact, DeltaScenario(grid=(0.5,)))
        with pytest.raises(ConfigError, match="missing arms \\['0'\\]"):
            run_bounds(exact_ds, nu_exact, DeltaScenario(per_arm={"1": (0.5, 1.0)}))
        with pytest.raises(ConfigError, match="low <= high"):
            run_bounds(exact_ds, nu_exact, DeltaScenario(per_arm={"1": (1.0, 0.5), "0": (0.5, 1.0)}))
        with pytest.raises(ConfigError, match="must be a \\(low, high\\) pair"):
            run_bounds(exact_ds, nu_exact, DeltaScenario(per_arm={"1": 0.5, "0": (0.5, 1.0)}))
        with pytest.raises(ConfigError, match="upper bound for arm '1'"):
            run_bounds(exact_ds, nu_exact, DeltaScenario(per_arm={"1": (0.5, 1.5), "0": (0.5, 1.0)}))


def mc_scenario(**kw):
    base = dict(per_arm={"1": PAPER_TRAP_1, "0": PAPER_TRAP_0}, draws=2000, seed=13)
    base.update(kw)
    return DeltaScenario(**base)


class TestRunMc:
    def test_deterministic(self, exact_ds, nu_exact):
        m1 = run_mc(exact_ds, nu_exact, mc_scenario())
        m2 = run_mc(exact_ds, nu_exact, mc_scenario())
        for arm in ("0", "1"):
            assert np.array_equal(m1.delta[arm], m2.delta[arm])
            assert np.array_equal(m1.psi[arm], m2.psi[arm])
            assert np.array_equal(m1.se[arm], m2.se[arm])
            assert np.array_equal(m1.augment_z[arm], m2.augment_z[arm])
        assert np.array_equal(m1.rd, m2.rd) and np.array_equal(m1.se_rd, m2.se_rd)
        m3 = run_mc(exact_ds, nu_exact, mc_scenario(seed=14))
        assert not np.array_equal(m1.delta["1"], m3.delta["1"])

    def test_draws_follow_priors(self, exact_ds, nu_exact):
        mc = run_mc(exact_ds, nu_exact, mc_scenario(draws=10000))
        assert mc.delta["1"].min() >= 0.5 and mc.delta["1"].max() <= 1.0
        assert np.mean(mc.delta["1"]) == pytest.approx(PAPER_TRAP_1.mean(), abs=0.005)
        assert np.mean(mc.delta["0"]) == pytest.approx(PAPER_TRAP_0.mean(), abs=0.005)

    def test_affine_path_matches_direct_evaluation(self, crooked_ds, nu_crooked):
        mc = run_mc(crooked_ds, nu_crooked, mc_scenario(draws=100))
        n = crooked_ds.n
        for arm in ("0", "1"):
            for i in (0, 17, 99):
                d = float(mc.delta[arm][i])
                est = onestep_psi(nu_crooked, arm, d)
                assert mc.psi[arm][i] == pytest.approx(est.point, abs=1e-12)
                assert mc.se[arm][i] == pytest.approx(eic_variance(est).se, abs=1e-12)
        for i in (3, 42):
            d1, d0 = float(mc.delta["1"][i]), float(mc.delta["0"][i])
            e1, e0 = onestep_psi(nu_crooked, "1", d1), onestep_psi(nu_crooked, "0", d0)
            assert mc.rd[i] == pytest.approx(e1.point - e0.point, abs=1e-12)
            diff = e1.influence - e0.influence
            assert mc.se_rd[i] == pytest.approx(np.sqrt(np.var(diff, ddof=1) / n), abs=1e-12)

    def test_mild_inadmissibility_flagged(self, exact_ds, nu_exact):
        # arm 0 fitted adherence tops out at 0.95, so draws above 1/0.95
        # are invalid; this prior puts ~0.4% of mass there
        prior0 = TrapezoidDist(0.9, 0.95, 1.0, 1.06)
        mc = run_mc(
            exact_ds,
            nu_exact,
            mc_scenario(per_arm={"1": PAPER_TRAP_1, "0": prior0}, draws=10000, delta_max=1.2),
        )
        assert 0 < mc.n_invalid <= 0.05 * 10000
        bad = ~mc.valid
        assert np.all(mc.delta["0"][bad] > 1.0 / 0.96)
        s = summarize_mc(mc)
        assert s.n_valid == 10000 - mc.n_invalid

    def test_severe_inadmissibility_aborts(self, exact_ds, nu_exact):
        prior0 = TrapezoidDist(1.06, 1.1, 1.15, 1.2)
        with pytest.raises(ConfigError, match="violate the adherence bound"):
            run_mc(
                exact_ds,
                nu_exact,
                mc_scenario(per_arm={"1": PAPER_TRAP_1, "0": prior0}, delta_max=1.2),
            )

    def test_point_mass_priors_give_constant_draws(self, exact_ds, nu_exact):
        mc = run_mc(
            exact_ds,
            nu_exact,
            mc_scenario(
                per_arm={"1": TrapezoidDist(0.5, 0.5, 0.5, 0.5), "0": TrapezoidDist(0.5, 0.5, 0.5, 0.5)},
                draws=200,
            ),
        )
        assert np.ptp(mc.psi["1"]) == 0.0
        assert mc.psi["1"][0] == pytest.approx(0.66, abs=1e-9)
        s = summarize_mc(mc)
        med, lo, hi = s.overall["psi[1]"]
        assert med == lo == hi

    def test_validation(self, exact_ds, nu_exact):
        with pytest.raises(ConfigError, match="at least 100 draws"):
            run_mc(exact_ds, nu_exact, mc_scenario(draws=50))
        with pytest.raises(ConfigError, match="per-arm trapezoid priors"):
            run_mc(exact_ds, nu_exact, DeltaScenario(grid=(0.5,)))
        with pytest.raises(ConfigError, match="missing arms"):
            run_mc(exact_ds, nu_exact, DeltaScenario(per_arm={"1": PAPER_TRAP_1}))
        with pytest.raises(ConfigError, match="must be a TrapezoidDist"):
            run_mc(exact_ds, nu_exact, mc_scenario(per_arm={"1": 0.5, "0": PAPER_TRAP_0}))
        with pytest.raises(ConfigError, match="trapezoid maximum for arm"):
            run_mc(
                exact_ds,
                nu_exact,
                mc_scenario(per_arm={"1": TrapezoidDist(0.5, 0.6, 0.9, 1.4), "0": PAPER_TRAP_0}),
            )
        with pytest.raises(ConfigError, match="onestep"):
            run_mc(exact_ds, nu_exact, mc_scenario(), AnalysisOptions(estimator="gcomp", engine="sandwich"))


def hand_mc(psi1, se1=None, psi0=None, se0=None, constraint=None):
    """Assemble an McResult directly so summaries can be checked by hand."""
    psi1 = np.asarray(psi1, dtype=float)
    n = psi1.size
    psi0 = np.zeros(n) if psi0 is None else np.asarray(psi0, dtype=float)
    se1 = np.zeros(n) if se1 is None else np.asarray(se1, dtype=float)
    se0 = np.zeros(n) if se0 is None else np.asarray(se0, dtype=float)
    rng = np.random.default_rng(5)
    return McResult(
        referent="0",
        other="1",
        seed=0,
        n_draws=n,
        delta={"0": np.linspace(0.4, 1.0, n), "1": np.linspace(0.5, 0.9, n)},
        psi={"1": psi1, "0": psi0},
        se={"1": se1, "0": se0},
        rd=psi1 - psi0,
        se_rd=np.sqrt(se1**2 + se0**2),
        valid=np.ones(n, dtype=bool),
        augment_z={"1": rng.standard_normal(n), "0": rng.standard_normal(n), "rd": rng.standard_normal(n)},
        constraint=constraint,
        n_invalid=0,
    )


class TestSummarizeMc:
    def test_percentiles_by_hand(self):
        mc = hand_mc(np.linspace(0.0, 1.0, 101))
        s = summarize_mc(mc)
        med, lo, hi = s.overall["psi[1]"]
        assert med == pytest.approx(0.5, abs=1e-15)
        assert lo == pytest.approx(0.025, abs=1e-12)
        assert hi == pytest.approx(0.975, abs=1e-12)
        assert s.quantities == ("psi[0]", "psi[1]", "rd")
        assert s.constrained is None and s.subset_size is None

    def test_zero_se_makes_augmentation_a_no_op(self):
        mc = hand_mc(np.linspace(0.2, 0.8, 50))
        raw = summarize_mc(mc, se_augment=False)
        aug = summarize_mc(mc, se_augment=True)
        assert raw.overall == aug.overall
        assert aug.se_augment is True

    def test_augmentation_subtracts_z_times_se(self):
        psi = np.full(200, 0.5)
        se = np.full(200, 0.1)
        mc = hand_mc(psi, se1=se)
        aug = summarize_mc(mc, se_augment=True)
        want = np.percentile(psi - mc.augment_z["1"] * 0.1, [50.0, 2.5, 97.5])
        assert aug.overall["psi[1]"] == pytest.approx(tuple(want), abs=1e-15)

    def test_tuple_constraint_filters_draws(self):
        mc = hand_mc(np.linspace(0.0, 1.0, 101), constraint=("1", "0"))
        s = summarize_mc(mc)
        keep = mc.delta["1"] <= mc.delta["0"]
        assert s.constraint_label == "delta[1] <= delta[0]"
        assert s.subset_size == int(keep.sum())
        med, _, _ = s.constrained["psi[1]"]
        assert med == pytest.approx(float(np.percentile(mc.psi["1"][keep], 50.0)), abs=1e-15)

    def test_callable_constraint(self):
        mc = hand_mc(np.linspace(0.0, 1.0, 101))
        s = summarize_mc(mc, constraint=lambda d: d["1"] < 0.6)
        assert s.constraint_label == "custom"
        assert s.subset_size == int((mc.delta["1"] < 0.6).sum())

    def test_constraint_errors(self):
        mc = hand_mc(np.linspace(0.0, 1.0, 101))
        with pytest.raises(ConfigError, match="excludes every valid draw"):
            summarize_mc(mc, constraint=lambda d: np.zeros(101, dtype=bool))
        with pytest.raises(ConfigError, match="one boolean per draw"):
            summarize_mc(mc, constraint=lambda d: np.ones(5, dtype=bool))
        with pytest.raises(ConfigError, match="unknown arm 'x'"):
            summarize_mc(mc, constraint=("x", "0"))
        with pytest.raises(ConfigError, match="pair"):
            summarize_mc(mc, constraint=0.5)

    def test_augmented_intervals_widen_on_real_run(self, exact_ds, nu_exact):
        mc = run_mc(exact_ds, nu_exact, mc_scenario(draws=4000))
        raw = summarize_mc(mc, se_augment=False)
        aug = summarize_mc(mc, se_augment=True)
        for q in raw.quantities:
            w_raw = raw.overall[q][2] - raw.overall[q][1]
            w_aug = aug.overall[q][2] - aug.overall[q][1]
            assert w_aug > w_raw


class TestPredictedAdherence:
    def test_exact_values(self, nu_exact):
        s = predicted_adherence_under_delta(nu_exact, "1", 1.0)
        assert s.mean == pytest.approx(0.7, abs=1e-8)
        assert s.median == pytest.approx(0.7, abs=1e-8)
        assert s.q1 == pytest.approx(0.6, abs=1e-8)
        assert s.q3 == pytest.approx(0.8, abs=1e-8)

    def test_constant_delta_scales_exactly(self, nu_exact):
        base = predicted_adherence_under_delta(nu_exact, "1", 1.0)
        for d in (0.75, 0.5, 0.25):
            scaled = predicted_adherence_under_delta(nu_exact, "1", d)
            # bit-for-bit: scaling by a constant commutes with order statistics
            assert scaled.mean == d * base.mean
            assert scaled.median == d * base.median
            assert scaled.q1 == d * base.q1
            assert scaled.q3 == d * base.q3

    def test_zero_delta(self, nu_exact):
        s = predicted_adherence_under_delta(nu_exact, "1", 0.0)
        assert s.mean == s.median == s.q1 == s.q3 == 0.0

    def test_table_delta(self, nu_exact):
        s = predicted_adherence_under_delta(
            nu_exact, "1", {"covariate": "w", "table": {"0": 0.5, "1": 1.0}}
        )
        # target rows: 500 at 0.8*0.5 = 0.4, 500 at 0.6*1.0 = 0.6
        assert s.mean == pytest.approx(0.5, abs=1e-8)
        assert s.q1 == pytest.approx(0.4, abs=1e-8)
        assert s.q3 == pytest.approx(0.6, abs=1e-8)

    def test_errors(self, nu_exact):
        with pytest.raises(ConfigError, match="unknown arm"):
            predicted_adherence_under_delta(nu_exact, "x", 1.0)
        with pytest.raises(ConfigError, match="inadmissible"):
            predicted_adherence_under_delta(nu_exact, "0", 1.2)
