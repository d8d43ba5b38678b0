"""EV charging reservation scheduling: exact, approximate and learned solvers."""

__version__ = "0.1.0"

from .core import (ChargingOption, Horizon, Instance, InstanceError, Request, Schedule, Solution, Station,
                   check_feasibility, conditional_gain, evaluate_objective, load_instance, save_instance)
from .gen import GenParams, generate_synthetic, ingest_acn
from .greedy import greedy_u
from .lp import ptas_star, solve_lp_relaxation
from .oracle import enumerate_exhaustive, solve_exact

__all__ = [
    "ChargingOption", "Horizon", "Instance", "InstanceError", "Request", "Schedule", "Solution", "Station",
    "check_feasibility", "conditional_gain", "evaluate_objective", "load_instance", "save_instance",
    "GenParams", "generate_synthetic", "ingest_acn", "greedy_u", "ptas_star", "solve_lp_relaxation",
    "enumerate_exhaustive", "solve_exact",
]
