"""Exception types shared across the package."""


class RegretLabError(Exception):
    """Base class for all package-specific errors."""


class InputError(RegretLabError, ValueError):
    """An argument violates a documented precondition (off-grid bid, size mismatch, ...)."""


class UndefinedResultError(RegretLabError, ArithmeticError):
    """The requested quantity is undefined for the given inputs (e.g. all-zero optima)."""


class ContractViolationError(RegretLabError, RuntimeError):
    """A caller asked for data that the protocol says does not exist."""


class CapExceededError(RegretLabError, ValueError):
    """An instance exceeds a configured size cap. The message carries the measured sizes."""


class SolverError(RegretLabError, RuntimeError):
    """The LP solver failed to converge; the message includes an iteration dump."""


class ConfigError(RegretLabError, ValueError):
    """An experiment config file is malformed or contains unknown keys."""
