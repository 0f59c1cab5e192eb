"""Deterministic and stochastic solvers."""

from .deterministic import (IterateTrace, SolverConfig, StepSizeWarning, TraceRow, fista_t_sequence,
                            run_admm, run_condat_vu, run_coordinate_descent, run_fista, run_gd, run_nag,
                            run_pd3o, run_pdhg, run_pgd)
from .stochastic import (Estimator, ModifiedSAGAEstimator, PartitionedProblem, SAGAEstimator,
                         SAGEstimator, SGDEstimator, StepSchedule, SVRGEstimator, make_estimator,
                         run_accelerated_vr, run_adaptive, run_saga, run_sgd, run_spdhg, run_svrg,
                         spdhg_step_guard, stochastic_gradient)

__all__ = [
    "IterateTrace", "SolverConfig", "StepSizeWarning", "TraceRow", "fista_t_sequence",
    "run_admm", "run_condat_vu", "run_coordinate_descent", "run_fista", "run_gd", "run_nag",
    "run_pd3o", "run_pdhg", "run_pgd",
    "Estimator", "ModifiedSAGAEstimator", "PartitionedProblem", "SAGAEstimator", "SAGEstimator",
    "SGDEstimator", "StepSchedule", "SVRGEstimator", "make_estimator", "run_accelerated_vr",
    "run_adaptive", "run_saga", "run_sgd", "run_spdhg", "run_svrg", "spdhg_step_guard",
    "stochastic_gradient",
]
