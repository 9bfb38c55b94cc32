"""Prediction under random distribution shift: predictors, shift generators, oracles and experiments."""

from ._kernels import BACKEND
from .assignment import Assignment, AssignmentInstance, brute_force_assignment, evaluate_impact, solve_assignment
from .dist_core import (
    Alphabet,
    ChainJoint,
    ConditionalJoint,
    PredictorTable,
    ProxyScaling,
    cond_mean_y2_given_x,
    cond_mean_y2_given_y1_x,
    fit_proxy_scaling,
    new_conditional_joint,
    noise_terms,
)
from .estimators import (
    SampleSet,
    fit_first_stage,
    hat_tau_A,
    hat_tau_B,
    hat_tau_C,
    tau_A,
    tau_B,
    tau_C,
    tau_nested,
)
from .errors import ShiftlabError
from .mc_lab import (
    ExperimentConfig,
    run_finite_sample_experiment,
    run_permutation_benchmark,
    run_theorem1_experiment,
    run_theorem2_experiment,
)
from .shifts import (
    ShiftDraw,
    ShiftSpec,
    permute_covariates,
    sample_asymmetric_shift,
    sample_paired_perturbation,
    sample_symmetric_shift,
    validate_generator,
)
from .theory import asymptotic_variances, theorem1_predict

__version__ = "0.1.0"
