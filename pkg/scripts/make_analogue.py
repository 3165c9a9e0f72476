"""Regenerate the bundled synthetic analogue dataset.

The analogue mimics the *shape* of a two-arm trial transported to a much
larger administrative target sample: a small trial (n1=570) with high
adherence in the referent arm and markedly lower adherence in the other,
and a target population (n0=3000) that skews younger and more severe than
the trial. All probabilities are synthetic; no real study values are
reproduced. Run from the repository root:

    python3 scripts/make_analogue.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from transport_sa import Covariate, CovariateSchema, generate_data, save_dataset
from transport_sa.simulate import DgpSpec, _grid_levels

SEED = 20240817

schema = CovariateSchema((
    Covariate("sex", "binary"),
    Covariate("severe", "binary"),
    Covariate("age_group", "categorical", ("18-29", "30-44", "45plus")),
))

AGE_CODE = {"18-29": 0.0, "30-44": 1.0, "45plus": 2.0}


def expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def cell_probs(intercept, b_sex, b_severe, b_age):
    out = []
    for sex, severe, age in _grid_levels(schema):
        logit = intercept + b_sex * float(sex) + b_severe * float(severe) + b_age * AGE_CODE[age]
        out.append(float(expit(logit)))
    return out


def cell_weights(w_sex, w_severe, w_age):
    raw = []
    for sex, severe, age in _grid_levels(schema):
        raw.append(np.exp(w_sex * float(sex) + w_severe * float(severe) + w_age * AGE_CODE[age]))
    raw = np.asarray(raw)
    return list(raw / raw.sum())


spec = DgpSpec(
    schema=schema,
    # trial leans male, moderate severity, mid ages; target younger and more severe
    p_trial=cell_weights(0.45, -0.25, 0.10),
    p_target=cell_weights(0.30, 0.35, -0.40),
    arms=("med_a", "med_b"),
    assignment={"med_b": cell_probs(0.0, 0.0, 0.0, 0.0)},
    # referent arm adheres at ~0.93, the other at ~0.72, both dip with severity
    adherence={
        "med_a": cell_probs(2.9, -0.15, -0.55, 0.25),
        "med_b": cell_probs(1.25, -0.10, -0.65, 0.30),
    },
    # relapse-like outcome: adhering lowers the event probability in both arms
    outcome_adherent={
        "med_a": cell_probs(-0.30, 0.10, 0.80, -0.25),
        "med_b": cell_probs(-0.75, 0.15, 0.70, -0.20),
    },
    outcome_nonadherent={
        "med_a": cell_probs(1.30, 0.05, 0.55, -0.15),
        "med_b": cell_probs(1.40, 0.10, 0.60, -0.10),
    },
    n1=570,
    n0=3000,
    seed=SEED,
)


def main() -> None:
    out = os.path.join(os.path.dirname(__file__), "..", "data", "analogue.csv")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    ds = generate_data(spec)
    save_dataset(ds, out)
    target = ds.s == 0
    print(f"wrote {os.path.normpath(out)}: n1={ds.n1} n0={ds.n0} arms={ds.arms}")
    for arm in ds.arms:
        rows = (ds.s == 1) & (ds.a == arm)
        print(f"  {arm}: trial rows={int(rows.sum())} adherence={ds.z[rows].mean():.3f} "
              f"event rate={ds.y[rows].mean():.3f}")


if __name__ == "__main__":
    main()
