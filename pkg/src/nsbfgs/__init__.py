"""BFGS on piecewise differentiable max-functions, at machine or extended precision."""
from .mpnum import MACHINE, Precision, rank_of_span, sym_eigen
from .piecewise import (PiecewiseFunction, Selection, active_sets, check_a2_1, is_critical,
                        min_norm_convex_hull, nspace_basis)
from .problems import (MaxInstance, analytic_problem, generate_max_instance,
                       instance_as_piecewise, quadratic_problem)
from .solver import RunTrace, SolverConfig, WolfeParams, bfgs_update, run, wolfe_line_search

__all__ = [
    "MACHINE", "Precision", "rank_of_span", "sym_eigen",
    "PiecewiseFunction", "Selection", "active_sets", "check_a2_1", "is_critical",
    "min_norm_convex_hull", "nspace_basis",
    "MaxInstance", "analytic_problem", "generate_max_instance", "instance_as_piecewise",
    "quadratic_problem",
    "RunTrace", "SolverConfig", "WolfeParams", "bfgs_update", "run", "wolfe_line_search",
]
