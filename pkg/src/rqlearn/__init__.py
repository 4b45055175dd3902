"""Robust two-stage Q-learning with cross-fitted nuisances and a simulation harness."""

from .baselines import (
    BootstrapSpec,
    ComparatorFit,
    bootstrap_ci,
    comparator_inference,
    estimate_p_hat,
    fit_dwols,
    fit_standard_q,
    resample_size_m,
)
from .crossfit import (
    FoldPlan,
    NuisanceLearners,
    crossfit_nuisances,
    crossfit_pseudo_mean,
    make_folds,
)
from .data_model import (
    Dataset,
    DesignMatrices,
    NuisanceEstimates,
    StageDesign,
    StageFit,
    Trajectory,
    build_design_matrices,
    column_design,
    interaction_design,
    trial_design,
)
from .exceptions import (
    ConfigError,
    DataFormatError,
    DegenerateLabelsError,
    FoldClassError,
    PositiveDefiniteError,
    RqlearnError,
    SingularDesignError,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    ValueRow,
    run_experiment,
    run_value_study,
)
from .learners import (
    FittedModel,
    LearnerSpec,
    cv_risk,
    fit_additive_spline,
    fit_kernel_smoother,
    fit_learner,
    fit_least_squares,
    fit_logistic_irls,
    fit_random_forest,
    fit_super_learner,
)
from .robust_q import (
    Regime,
    RobustQResult,
    decide,
    fit_robust_q,
    fit_stage1,
    fit_stage2,
    pseudo_outcome,
    sandwich_cov,
    wald_ci,
)
from .simgen import (
    Scenario,
    SimTruth,
    ValueResult,
    project_true_beta1,
    project_true_beta2,
    regime_value,
    scenario_truth,
    simulate_dataset,
    true_nuisances,
)

__version__ = "0.1.0"
