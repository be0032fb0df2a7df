"""Joint learning-based stabilization of linear systems with shared bases."""

from .algorithm import (
    AlgorithmConfig, StabilizationOutcome, epoch_boundaries, run_algorithm1,
    run_individual_baseline, sample_feedback,
)
from .ensemble import (
    Dimensions, DynamicsParameter, Ensemble, SharedBasisFactorization, compose_dynamics,
    generate_ensemble, spectral_radius, step,
)
from .errors import ConvergenceError, GenerationError, JointStabError, NumericalError, UsageError
from .estimator import (
    FitOptions, JointEstimate, TrajectoryDataset, als_step_bases, als_step_weights,
    fit_individual, fit_joint, rescaled_loss,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .riccati import CostMatrices, feedback_gain, is_stabilized, solve_dare

__version__ = "0.1.0"
