"""Exception types shared across the package."""


class RcnError(Exception):
    """Base class for all package errors."""


class ShapeError(RcnError, ValueError):
    """Tensor dimensions incompatible with the requested operation."""


class ContractError(RcnError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(RcnError, ValueError):
    """Bad configuration key, value, or missing prerequisite."""


class NumericError(RcnError, ArithmeticError):
    """Non-finite value where a finite one is required."""


class GenerationError(RcnError, RuntimeError):
    """Synthetic scene could not be constructed (e.g. overcrowding)."""
