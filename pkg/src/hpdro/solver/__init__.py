"""LP/MILP machinery: dual simplex, branch and bound, enumeration oracle, MPS export."""

from .lp import DualSimplex, LpSolution, solve_lp
from .bnb import BnbConfig, enumerate_small, solve_milp
from .mps import export_mps

__all__ = ["BnbConfig", "DualSimplex", "LpSolution", "enumerate_small", "export_mps",
           "solve_lp", "solve_milp"]
