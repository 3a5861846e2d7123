"""regretlab: no-regret bidding dynamics in repeated auction games.

The package simulates populations of learning bidders matched into
single-shot auctions, certifies welfare guarantees of the underlying
mechanisms via deviation-based smoothness checks, and cross-validates the
simulated play against exact equilibrium computations on the induced
agent-form game.
"""

__version__ = "0.1.0"

from . import analysis, exact, learners, mechanisms, simulator, smoothness
from .errors import (
    CapExceededError,
    ConfigError,
    ContractViolationError,
    InputError,
    RegretLabError,
    SolverError,
    UndefinedResultError,
)

__all__ = [
    "analysis",
    "exact",
    "learners",
    "mechanisms",
    "simulator",
    "smoothness",
    "CapExceededError",
    "ConfigError",
    "ContractViolationError",
    "InputError",
    "RegretLabError",
    "SolverError",
    "UndefinedResultError",
]
