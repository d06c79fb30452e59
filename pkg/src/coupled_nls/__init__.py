"""Variational solver for linearly and nonlinearly coupled Schrodinger-type systems."""

__version__ = "0.1.0"

from .functionals import FunctionalContext, State, dual_residual, energy_E, functional_J, functional_P, psi
from .grid import Grid, GridMode, GridSpec, build_grid
from .model import PotentialSet, PowerSum, ProblemSpec, QuarticCoupled, benchmark_problem, check_hypotheses
from .pencil import EigenSeq, locate_lambda, minmax_oracle, sign_normalize, solve_pencil
from .solver import CriticalPoint, SolverConfig, find_critical_point

__all__ = [
    "CriticalPoint", "EigenSeq", "FunctionalContext", "Grid", "GridMode", "GridSpec", "PotentialSet", "PowerSum",
    "ProblemSpec", "QuarticCoupled", "SolverConfig", "State", "benchmark_problem", "build_grid", "check_hypotheses",
    "dual_residual", "energy_E", "find_critical_point", "functional_J", "functional_P", "locate_lambda",
    "minmax_oracle", "psi", "sign_normalize", "solve_pencil",
]
