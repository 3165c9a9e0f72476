"""Transport trial findings to an external target population under
user-specified adherence-ratio sensitivity parameters.

The package estimates mean potential outcomes (and their contrast) in a
target population described only by covariates, combining trial outcome,
adherence, and assignment models with a selection model, under a
sensitivity parameter giving the ratio of target to trial adherence.
"""

from .data import (
    Covariate,
    CovariateSchema,
    StudyDataset,
    StudyRecord,
    design_columns,
    design_matrix,
    load_dataset,
    save_dataset,
)
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
from .exceptions import (
    ConfigError,
    DataError,
    DegenerateResponseError,
    FitError,
    SeparationError,
    TransportError,
)
from .inference import (
    CiResult,
    VarianceEstimate,
    bootstrap_replicates,
    bootstrap_variance,
    eic_variance,
    sandwich_variance,
    sandwich_variance_contrast,
    wald_ci,
)
from .nuisance import (
    FoldAssignment,
    LogisticModel,
    NuisanceSet,
    crossfit_predictions,
    fit_logistic,
    fit_nuisance_set,
    make_folds,
)
from .sensitivity import (
    AdherenceSummary,
    AnalysisOptions,
    BoundsResult,
    DeltaScenario,
    GridRow,
    McResult,
    McSummary,
    TrapezoidDist,
    predicted_adherence_under_delta,
    run_bounds,
    run_mc,
    run_static_grid,
    sample_trapezoid,
    summarize_mc,
)
from .simulate import (
    ALL_CORRECT,
    DgpSpec,
    ExperimentRow,
    MisspecConfig,
    generate_data,
    oracle_psi,
    run_dr_experiment,
    toy_dgp,
    toy_dgp_tilted,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_CORRECT",
    "AdherenceSummary",
    "AnalysisOptions",
    "BoundsResult",
    "CiResult",
    "ConfigError",
    "Covariate",
    "CovariateSchema",
    "DataError",
    "DegenerateResponseError",
    "DeltaScenario",
    "DeltaValue",
    "DgpSpec",
    "EstimateResult",
    "ExperimentRow",
    "FitError",
    "FoldAssignment",
    "GridRow",
    "LogisticModel",
    "McResult",
    "McSummary",
    "MisspecConfig",
    "NuisanceSet",
    "SeparationError",
    "StudyDataset",
    "StudyRecord",
    "TransportError",
    "TrapezoidDist",
    "VarianceEstimate",
    "as_delta",
    "bootstrap_replicates",
    "bootstrap_variance",
    "check_delta",
    "crossfit_predictions",
    "design_columns",
    "design_matrix",
    "eic_variance",
    "fit_logistic",
    "fit_nuisance_set",
    "gcomp_psi",
    "generate_data",
    "load_dataset",
    "make_folds",
    "onestep_psi",
    "oracle_psi",
    "predicted_adherence_under_delta",
    "risk_difference",
    "run_bounds",
    "run_dr_experiment",
    "run_mc",
    "run_static_grid",
    "sample_trapezoid",
    "sandwich_variance",
    "sandwich_variance_contrast",
    "save_dataset",
    "summarize_mc",
    "toy_dgp",
    "toy_dgp_tilted",
    "transport_onestep_setting1",
    "trial_onestep",
    "wald_ci",
]
