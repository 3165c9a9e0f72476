"""Point estimators, the influence curve, and their algebraic identities."""

import numpy as np
import pytest

from transport_sa import (
    ConfigError,
    Covariate,
    CovariateSchema,
    DeltaValue,
    NuisanceSet,
    StudyDataset,
    as_delta,
    check_delta,
    fit_nuisance_set,
    gcomp_psi,
    generate_data,
    onestep_psi,
    risk_difference,
    toy_dgp,
    transport_onestep_setting1,
    trial_onestep,
)
from transport_sa.estimators import eic_evaluate

from conftest import BINARY_SCHEMA


@pytest.fixture(scope="module")
def nu_exact(exact_ds):
    return fit_nuisance_set(exact_ds)


@pytest.fixture(scope="module")
def nu_crooked(crooked_ds):
    return fit_nuisance_set(crooked_ds)


def hand_nuisance_set():
    """A four-row dataset with nuisance values written in by hand.

    Row 0 is the worked trial-record case (arm 1, adherent, event, all
    nuisances at round numbers); rows 2-3 are target rows whose outcome
    predictions are pinned at 0.6 regardless of adherence.
    """
    s = np.array([1, 1, 0, 0])
    a = np.array(["1", "0", "", ""], dtype=object)
    z = np.array([1.0, 0.0, np.nan, np.nan])
    y = np.array([1.0, 0.0, np.nan, np.nan])
    ds = StudyDataset(BINARY_SCHEMA, s, a, z, y, {"w": np.array([0.0, 0.0, 0.0, 1.0])})
    full = lambda v: np.full(4, v)
    return NuisanceSet(
        dataset=ds,
        arms=("0", "1"),
        positive_arm="1",
        q1={"1": np.array([0.3, 0.3, 0.6, 0.6]), "0": full(0.5)},
        q0={"1": np.array([0.7, 0.7, 0.6, 0.6]), "0": full(0.5)},
        m={"1": full(0.8), "0": full(0.9)},
        g={"1": full(0.5), "0": full(0.5)},
        h=full(0.5),
        k_hat=0.5,
        truncation=(0.001, 0.999),
        models={},
        designs={},
    )


class TestDeltaValue:
    def test_exactly_one_mode(self):
        with pytest.raises(ConfigError, match="exactly one"):
            DeltaValue("1", constant=0.5, covariate="w", table={"0": 0.5, "1": 0.5})
        with pytest.raises(ConfigError, match="exactly one"):
            DeltaValue("1")

    def test_constant_must_be_nonnegative_finite(self):
        with pytest.raises(ConfigError, match="finite and >= 0"):
            DeltaValue("1", constant=-0.1)
        with pytest.raises(ConfigError, match="finite and >= 0"):
            DeltaValue("1", constant=float("inf"))
        assert DeltaValue("1", constant=0.0).constant == 0.0

    def test_table_validation(self):
        with pytest.raises(ConfigError, match="needs a covariate name"):
            DeltaValue("1", table={"0": 0.5})
        with pytest.raises(ConfigError, match="table is empty"):
            DeltaValue("1", covariate="w", table={})
        with pytest.raises(ConfigError, match="level '0'"):
            DeltaValue("1", covariate="w", table={"0": -1.0, "1": 0.5})

    def test_values_for_constant(self, nu_exact):
        vals = DeltaValue("1", constant=0.75).values_for(nu_exact)
        assert vals.shape == (nu_exact.dataset.n,)
        assert np.all(vals == 0.75)

    def test_values_for_binary_table(self, nu_exact):
        vals = DeltaValue("1", covariate="w", table={"0": 0.5, "1": 0.9}).values_for(nu_exact)
        w = nu_exact.dataset.covariates["w"]
        assert np.all(vals[w == 0.0] == 0.5)
        assert np.all(vals[w == 1.0] == 0.9)

    def test_values_for_categorical_table(self):
        schema = CovariateSchema((Covariate("site", "categorical", ("a", "b", "c")),))
        s = np.array([1, 1, 0, 0, 0])
        a = np.array(["1", "0", "", "", ""], dtype=object)
        z = np.array([1.0, 0.0, np.nan, np.nan, np.nan])
        y = np.array([1.0, 0.0, np.nan, np.nan, np.nan])
        site = np.array(["a", "b", "a", "b", "c"], dtype=object)
        ds = StudyDataset(schema, s, a, z, y, {"site": site})
        nu = hand_nuisance_set()  # only .dataset is consulted by values_for
        nu = NuisanceSet(**{**nu.__dict__, "dataset": ds, "q1": nu.q1, "q0": nu.q0})
        dv = DeltaValue("1", covariate="site", table={"a": 0.2, "b": 0.4, "c": 0.6})
        assert np.array_equal(dv.values_for(nu), [0.2, 0.4, 0.2, 0.4, 0.6])
        with pytest.raises(ConfigError, match="missing level 'c'"):
            DeltaValue("1", covariate="site", table={"a": 0.2, "b": 0.4}).values_for(nu)

    def test_continuous_covariate_cannot_index(self, nu_exact):
        schema = CovariateSchema((Covariate("age", "continuous"),))
        s = np.array([1, 0])
        ds = StudyDataset(
            schema,
            s,
            np.array(["1", ""], dtype=object),
            np.array([1.0, np.nan]),
            np.array([1.0, np.nan]),
            {"age": np.array([50.0, 60.0])},
        )
        nu = hand_nuisance_set()
        nu = NuisanceSet(**{**nu.__dict__, "dataset": ds})
        with pytest.raises(ConfigError, match="continuous covariate"):
            DeltaValue("1", covariate="age", table={"50": 1.0}).values_for(nu)

    def test_as_delta_coercion(self):
        dv = as_delta("1", 0.5)
        assert dv.constant == 0.5 and dv.arm == "1"
        dv2 = as_delta("1", {"covariate": "w", "table": {"0": 0.5, "1": 1.0}})
        assert dv2.table == {"0": 0.5, "1": 1.0}
        assert as_delta("1", dv) is dv
        with pytest.raises(ConfigError, match="for arm '1', expected '0'"):
            as_delta("0", dv)

    def test_describe_snapshots(self):
        assert DeltaValue("1", constant=0.5).describe() == {"arm": "1", "constant": 0.5}
        snap = DeltaValue("1", covariate="w", table={"0": 0.4, "1": 0.8}).describe()
        assert snap == {"arm": "1", "covariate": "w", "table": {"0": 0.4, "1": 0.8}}


class TestCheckDelta:
    def test_inadmissible_delta_names_row(self, nu_exact):
        with pytest.raises(ConfigError, match="inadmissible.*m_hat\\*delta"):
            check_delta(nu_exact, "0", as_delta("0", 1.2))

    def test_boundary_delta_allowed(self, nu_exact):
        target = nu_exact.dataset.s == 0
        d = 1.0 / float(nu_exact.m["0"][target].max())
        vals = check_delta(nu_exact, "0", as_delta("0", d))
        assert np.all(vals == d)

    def test_trial_rows_not_constrained(self, nu_exact):
        # inflate adherence on trial rows only: still admissible
        m0 = nu_exact.m["0"].copy()
        trial = nu_exact.dataset.s == 1
        m0[trial] = 0.999
        nu = NuisanceSet(**{**nu_exact.__dict__, "m": {"0": m0, "1": nu_exact.m["1"]}})
        d = 1.0 / float(m0[~trial].max())
        check_delta(nu, "0", as_delta("0", d))


class TestExactValues:
    """Saturated fits on integer-frequency data hit the enumeration values."""

    CASES = [
        ("1", 1.0, 0.52),
        ("1", 0.0, 0.80),
        ("1", 0.5, 0.66),
        ("1", 0.75, 0.59),
        ("0", 1.0, 0.33),
        ("0", 0.0, 0.70),
        ("0", 0.5, 0.515),
    ]

    @pytest.mark.parametrize("arm,delta,want", CASES)
    def test_gcomp(self, nu_exact, arm, delta, want):
        est = gcomp_psi(nu_exact, arm, delta)
        assert est.point == pytest.approx(want, abs=1e-8)
        assert est.estimand == "psi_G" and est.influence.size == 0
        assert not est.outside_unit_interval

    @pytest.mark.parametrize("arm,delta,want", CASES)
    def test_onestep(self, nu_exact, arm, delta, want):
        est = onestep_psi(nu_exact, arm, delta)
        assert est.point == pytest.approx(want, abs=1e-9)
        assert est.estimand == "psi_OS"
        assert est.influence.shape == (nu_exact.dataset.n,)

    def test_table_delta_by_hand(self, nu_exact):
        # w=0: 0.3*0.8*0.5 + 0.7*(1-0.4) = 0.54; w=1: 0.5*0.54 + 0.9*0.46 = 0.684
        delta = {"covariate": "w", "table": {"0": 0.5, "1": 0.9}}
        assert gcomp_psi(nu_exact, "1", delta).point == pytest.approx(0.612, abs=1e-8)
        assert onestep_psi(nu_exact, "1", delta).point == pytest.approx(0.612, abs=1e-9)

    def test_unknown_arm(self, nu_exact):
        with pytest.raises(ConfigError, match="unknown arm 'x'"):
            gcomp_psi(nu_exact, "x", 1.0)
        with pytest.raises(ConfigError, match="unknown arm 'x'"):
            onestep_psi(nu_exact, "x", 1.0)

    def test_correction_vanishes_on_saturated_fits(self):
        # q and m saturated => the trial residual terms sum to zero cell by
        # cell, so the one-step equals the plug-in on any realized dataset
        # (n large enough that no rare-stratum cell is pure, which would be
        # quasi-separation and a fit error)
        for seed in (0, 1, 2):
            nu = fit_nuisance_set(generate_data(toy_dgp(n1=2000, n0=2000, seed=seed)))
            for arm in ("0", "1"):
                for d in (0.3, 1.0):
                    g = gcomp_psi(nu, arm, d).point
                    o = onestep_psi(nu, arm, d).point
                    assert abs(g - o) <= 1e-10


class TestEicHandValues:
    def test_worked_records(self):
        nu = hand_nuisance_set()
        phi = eic_evaluate(nu, "1", 1.0, psi=0.52)
        # trial, A=arm, Z=1: (1/k)(1-h)/(h g) [ (Y - q1) + (q1-q0)(Z-m) ]
        #   = 2 * 2 * (0.7 - 0.4*0.2) = 2.48
        assert phi[0] == pytest.approx(2.48, abs=1e-12)
        # trial, other arm: indicator kills both terms
        assert phi[1] == 0.0
        # target: (mu - psi)/k with mu pinned at 0.6
        assert phi[2] == pytest.approx(0.16, abs=1e-12)
        assert phi[3] == pytest.approx(0.16, abs=1e-12)

    def test_onestep_point_from_hand_values(self):
        # (trial summand 0.62*2 + target mus 0.6+0.6) / n0 = 2.44/2
        nu = hand_nuisance_set()
        est = onestep_psi(nu, "1", 1.0)
        assert est.point == pytest.approx(1.22, abs=1e-12)
        assert est.outside_unit_interval

    def test_psi_must_be_finite(self):
        nu = hand_nuisance_set()
        with pytest.raises(ValueError, match="finite"):
            eic_evaluate(nu, "1", 1.0, psi=float("nan"))


class TestIdentities:
    def test_construction_identity(self, nu_crooked):
        # one-step point = plug-in + mean influence evaluated at the plug-in
        for arm in ("0", "1"):
            for d in (0.25, 0.8, 1.0):
                g = gcomp_psi(nu_crooked, arm, d).point
                phi = eic_evaluate(nu_crooked, arm, d, psi=g)
                o = onestep_psi(nu_crooked, arm, d).point
                assert o == pytest.approx(g + phi.mean(), abs=1e-12)

    def test_influence_mean_zero_at_onestep(self, nu_crooked):
        for arm in ("0", "1"):
            est = onestep_psi(nu_crooked, arm, 0.7)
            assert abs(est.influence.mean()) <= 1e-10

    def test_affine_in_constant_delta(self, nu_crooked):
        for fn, tol in ((gcomp_psi, 1e-12), (onestep_psi, 1e-12)):
            for arm in ("0", "1"):
                v0 = fn(nu_crooked, arm, 0.0).point
                v1 = fn(nu_crooked, arm, 1.0).point
                vh = fn(nu_crooked, arm, 0.5).point
                assert vh == pytest.approx(0.5 * (v0 + v1), abs=tol)

    def test_delta_one_reduces_to_equal_adherence_estimator(self, nu_crooked, nu_exact):
        for nu in (nu_crooked, nu_exact):
            for arm in ("0", "1"):
                a = onestep_psi(nu, arm, 1.0)
                b = transport_onestep_setting1(nu, arm)
                assert abs(a.point - b.point) <= 1e-12
                assert np.max(np.abs(a.influence - b.influence)) <= 1e-10


class TestTrialOnestep:
    def test_saturated_fits_give_standardized_mean(self, nu_exact):
        # trial covariate mix 0.6/0.4; arm-1 cell means 114/300 and 132/200
        assert trial_onestep(nu_exact, "1").point == pytest.approx(0.492, abs=1e-9)
        assert trial_onestep(nu_exact, "0").point == pytest.approx(0.308, abs=1e-9)

    def test_covariate_free_equals_arm_mean(self, exact_ds):
        nu = fit_nuisance_set(exact_ds, designs={k: [] for k in ("q", "m", "g", "h")})
        ds = exact_ds
        for arm in ("0", "1"):
            sample_mean = float(ds.y[(ds.s == 1) & (ds.a == arm)].mean())
            assert trial_onestep(nu, arm).point == pytest.approx(sample_mean, abs=1e-9)

    def test_target_rows_do_not_enter(self, exact_ds):
        w2 = exact_ds.covariates["w"].copy()
        target = exact_ds.s == 0
        w2[target] = 1.0 - w2[target]
        ds2 = StudyDataset(exact_ds.schema, exact_ds.s, exact_ds.a, exact_ds.z, exact_ds.y, {"w": w2})
        a = trial_onestep(fit_nuisance_set(exact_ds), "1")
        b = trial_onestep(fit_nuisance_set(ds2), "1")
        assert a.point == b.point

    def test_influence_centered(self, nu_crooked):
        est = trial_onestep(nu_crooked, "1")
        assert abs(est.influence.mean()) <= 1e-10
        assert est.estimand == "theta_OS"


class TestRiskDifference:
    def test_point_and_influence(self, nu_exact):
        e1 = onestep_psi(nu_exact, "1", 0.5)
        e0 = onestep_psi(nu_exact, "0", 0.5)
        rd = risk_difference(e1, e0)
        assert rd.point == pytest.approx(0.66 - 0.515, abs=1e-9)
        assert rd.estimand == "psi_OS:rd"
        assert rd.arm == "1-0"
        assert np.array_equal(rd.influence, e1.influence - e0.influence)
        assert not rd.outside_unit_interval

    def test_gcomp_contrast_has_no_influence(self, nu_exact):
        rd = risk_difference(gcomp_psi(nu_exact, "1", 0.5), gcomp_psi(nu_exact, "0", 0.5))
        assert rd.influence.size == 0

    def test_mismatches_rejected(self, nu_exact, nu_crooked):
        e1 = onestep_psi(nu_exact, "1", 0.5)
        e0 = onestep_psi(nu_exact, "0", 0.5)
        with pytest.raises(ValueError, match="cannot contrast"):
            risk_difference(e1, gcomp_psi(nu_exact, "0", 0.5))
        with pytest.raises(ValueError, match="both estimates are for arm"):
            risk_difference(e1, onestep_psi(nu_exact, "1", 0.3))
        with pytest.raises(ValueError, match="different sizes"):
            risk_difference(e1, onestep_psi(nu_crooked, "0", 0.5))
