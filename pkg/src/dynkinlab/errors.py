"""Exception types raised across the package."""
from __future__ import annotations


class DynkinLabError(Exception):
    """Base class for all package errors."""


class NumericalError(DynkinLabError):
    """Failures of the numerical machinery (CLI exit code 3)."""


class NonPositiveHorizon(DynkinLabError, ValueError):
    pass


class TreeTooDeep(DynkinLabError, ValueError):
    pass


class TerminalNode(DynkinLabError, ValueError):
    pass


class InvalidNode(DynkinLabError, ValueError):
    pass


class StepTooCoarse(DynkinLabError, ValueError):
    """The time step is too large for the effective Lipschitz constant."""

    def __init__(self, required_steps: int, message: str = ""):
        self.required_steps = required_steps
        super().__init__(message or f"time step too coarse; need N >= {required_steps}")


class NoConvergence(NumericalError):
    pass


class MissingPayoff(DynkinLabError, ValueError):
    pass


class TerminalOutOfBand(DynkinLabError, ValueError):
    pass


class BarrierCrossing(DynkinLabError, ValueError):
    pass


class NonCoherentGenerator(DynkinLabError, ValueError):
    pass


class EnumerationTooLarge(DynkinLabError, ValueError):
    pass


class HypothesisViolation(DynkinLabError, ValueError):
    pass


class LadderTooShort(DynkinLabError, ValueError):
    pass


class NotMonotone(DynkinLabError, ValueError):
    pass


class ConfigError(DynkinLabError):
    """Problems with a scenario file (CLI exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, line: int | None, key: str | None, message: str):
        self.line = line
        self.key = key
        where = f"line {line}" if line is not None else "unknown line"
        super().__init__(f"{where}, key {key!r}: {message}")


class ValidationError(ConfigError):
    def __init__(self, key: str, rule: str):
        self.key = key
        self.rule = rule
        super().__init__(f"{key}: {rule}")
