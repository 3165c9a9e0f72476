"""Shared test fixtures and dataset builders."""

import numpy as np
import pytest

from transport_sa import Covariate, CovariateSchema, StudyDataset
from transport_sa.simulate import DgpSpec, generate_data, toy_dgp, toy_dgp_tilted

BINARY_SCHEMA = CovariateSchema((Covariate("w", "binary"),))


def exact_frequency_dataset() -> StudyDataset:
    """Dataset whose empirical cell frequencies equal the toy process exactly.

    Saturated logistic fits (intercept + one binary covariate) then
    reproduce the true nuisance probabilities to solver precision, so the
    plug-in estimate equals the enumeration value and the one-step
    correction vanishes. Counts per (arm, w, z, y) are all integers:

      arm 1, w=0: 300 rows, 240 adherent (72 events), 60 non (42 events)
      arm 1, w=1: 200 rows, 120 adherent (60 events), 80 non (72 events)
      arm 0, w=0: 300 rows, 285 adherent (57 events), 15 non (9 events)
      arm 0, w=1: 200 rows, 180 adherent (72 events), 20 non (16 events)
      target: 500 rows at w=0, 500 at w=1
    """
    blocks = [
        # (arm, w, n_adherent, events_adherent, n_non, events_non)
        ("1", 0.0, 240, 72, 60, 42),
        ("1", 1.0, 120, 60, 80, 72),
        ("0", 0.0, 285, 57, 15, 9),
        ("0", 1.0, 180, 72, 20, 16),
    ]
    a, z, y, w = [], [], [], []
    for arm, wv, n1z, e1, n0z, e0 in blocks:
        for count, zv, events in ((n1z, 1.0, e1), (n0z, 0.0, e0)):
            a += [arm] * count
            z += [zv] * count
            w += [wv] * count
            y += [1.0] * events + [0.0] * (count - events)
    n_trial = len(a)
    n_target = 1000
    s = np.concatenate([np.ones(n_trial, dtype=np.int8), np.zeros(n_target, dtype=np.int8)])
    a_all = np.array(a + [""] * n_target, dtype=object)
    z_all = np.concatenate([np.array(z), np.full(n_target, np.nan)])
    y_all = np.concatenate([np.array(y), np.full(n_target, np.nan)])
    w_all = np.concatenate([np.array(w), np.array([0.0] * 500 + [1.0] * 500)])
    return StudyDataset(BINARY_SCHEMA, s, a_all, z_all, y_all, {"w": w_all})


def crooked_dgp(n1: int = 800, n0: int = 800, seed: int = 0) -> DgpSpec:
    """Two binary covariates with interaction-shaped truth.

    Main-effects logistic fits cannot represent these cells, so every
    nuisance model is (mildly) misspecified. Algebraic identities must
    hold regardless; this process makes those tests non-trivial.
    """
    schema = CovariateSchema((Covariate("x1", "binary"), Covariate("x2", "binary")))
    return DgpSpec(
        schema=schema,
        p_trial=[0.3, 0.2, 0.3, 0.2],
        p_target=[0.2, 0.3, 0.25, 0.25],
        arms=("0", "1"),
        assignment={"1": [0.5, 0.4, 0.6, 0.5]},
        adherence={"1": [0.85, 0.7, 0.6, 0.9], "0": [0.9, 0.95, 0.85, 0.8]},
        outcome_adherent={"1": [0.3, 0.5, 0.45, 0.2], "0": [0.25, 0.4, 0.2, 0.5]},
        outcome_nonadherent={"1": [0.7, 0.85, 0.6, 0.75], "0": [0.65, 0.7, 0.8, 0.6]},
        n1=n1,
        n0=n0,
        seed=seed,
    )


@pytest.fixture(scope="session")
def exact_ds() -> StudyDataset:
    return exact_frequency_dataset()


@pytest.fixture(scope="session")
def toy_spec():
    return toy_dgp()


@pytest.fixture(scope="session")
def toy_ds_small():
    return generate_data(toy_dgp(n1=1500, n0=1500, seed=42))


@pytest.fixture(scope="session")
def crooked_ds():
    return generate_data(crooked_dgp(seed=7))
