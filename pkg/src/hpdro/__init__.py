"""Day-ahead heat-pump scheduling under forecast uncertainty.

KL-divergence distributionally robust, Gaussian, interval-robust and
deterministic schedule models, a bundled branch-and-bound MILP solver,
an RC thermal plant and a Monte Carlo evaluation harness.
"""

__version__ = "0.1.0"

from .evaluation import EvaluationReport, ScenarioSet, monte_carlo_evaluate  # noqa: E402
from .model import (ForecastSet, InfeasibleModelError, MilpInstance, ScheduleSolution, ZoneSpec,  # noqa: E402
                    build_deterministic, build_ga_dro, build_kdea_dro, build_ro)
from .solver import BnbConfig, solve_milp  # noqa: E402
from .thermal import HouseSpec  # noqa: E402
from .uncertainty import ErrorHistory, fit_gaussian, fit_kde, radius_from_risk  # noqa: E402

__all__ = [
    "BnbConfig", "ErrorHistory", "EvaluationReport", "ForecastSet", "HouseSpec", "InfeasibleModelError",
    "MilpInstance", "ScenarioSet", "ScheduleSolution", "ZoneSpec", "__version__", "build_deterministic",
    "build_ga_dro", "build_kdea_dro", "build_ro", "fit_gaussian", "fit_kde", "monte_carlo_evaluate",
    "radius_from_risk", "solve_milp",
]
