"""Robust PMD-PD for tabular robust constrained MDPs.

Policy mirror descent with augmented-Lagrangian duals against an adversary
that moves the transition kernel inside an uncertainty set.
"""
from .harness import (ExperimentConfig, RunLog, SweepTable, emit, penalized_return, robustness_sweep,
                      run_training)
from .kernels import BACKEND
from .model import (OccupancyPair, RcmdpSpec, SoftmaxPolicy, g_values, lagrangian_value, occupancy,
                    perf_diff_terms, q_values, value)
from .policy_md import (DualState, MdConfig, augmented_cost, dual_update, md_update, policy_inner_loop,
                        pseudo_kl, regularized_q)
from .sampling import BudgetLedger, Trajectory, estimate_g, estimate_q_reg, estimate_v, sample_trajectory
from .tma import CpiConfig, TmaConfig, approximate_tma, cpi, tma_step, transition_gradient
from .uncertainty import NonRectSet, RectSet, contains, distort, linear_maximize, project

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "RunLog",
    "SweepTable",
    "emit",
    "penalized_return",
    "robustness_sweep",
    "run_training",
    "BACKEND",
    "OccupancyPair",
    "RcmdpSpec",
    "SoftmaxPolicy",
    "g_values",
    "lagrangian_value",
    "occupancy",
    "perf_diff_terms",
    "q_values",
    "value",
    "DualState",
    "MdConfig",
    "augmented_cost",
    "dual_update",
    "md_update",
    "policy_inner_loop",
    "pseudo_kl",
    "regularized_q",
    "BudgetLedger",
    "Trajectory",
    "estimate_g",
    "estimate_q_reg",
    "estimate_v",
    "sample_trajectory",
    "CpiConfig",
    "TmaConfig",
    "approximate_tma",
    "cpi",
    "tma_step",
    "transition_gradient",
    "NonRectSet",
    "RectSet",
    "contains",
    "distort",
    "linear_maximize",
    "project",
    "__version__",
]
