"""Optimal population transfer through decaying intermediate levels.

Analytic optima for three- and four-level chains, bounds for longer
chains, a controllability test on coupling graphs, and numerical checks
(propagation and adversarial search) of all of them.
"""
from .four_level import (FourLevelSolution, asymptotic_efficiency, case1_efficiency,
                         case2_efficiency, case2_solve, classify_case)
from .model import ChainSystem, ContractError, ControlSchedule, Kick, PolarState
from .n_chain import (CouplingGraph, PathWitness, admissible_path_search,
                      chain_efficiency_upper_bound, is_controllable, reduce_chain)
from .oracle import DiscretizedControlProblem, local_ascent, random_search, refine_and_extrapolate
from .propagator import (Trajectory, propagate, propagate_polar, reconstruct_full_controls,
                         rescale_time)
from .three_level import (ThreeLevelSolution, backward_adjoint, critical_time, efficiency_bound,
                          optimal_u, stirap_limit_pulses, switching_time)

__all__ = [
    "ChainSystem", "ContractError", "ControlSchedule", "CouplingGraph", "DiscretizedControlProblem",
    "FourLevelSolution", "Kick", "PathWitness", "PolarState", "ThreeLevelSolution", "Trajectory",
    "admissible_path_search", "asymptotic_efficiency", "backward_adjoint", "case1_efficiency",
    "case2_efficiency", "case2_solve", "chain_efficiency_upper_bound", "classify_case",
    "critical_time", "efficiency_bound", "is_controllable", "local_ascent", "optimal_u",
    "propagate", "propagate_polar", "random_search", "reconstruct_full_controls",
    "reduce_chain", "refine_and_extrapolate", "rescale_time", "stirap_limit_pulses",
    "switching_time",
]
__version__ = "0.1.0"
