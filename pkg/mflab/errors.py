""" Error types raised by mflab operations.

Every error derives from MflabError and from ValueError, so callers that only
care about bad input can keep catching ValueError.
"""
from typing import Dict, Optional


class MflabError(ValueError):
    pass


class UnsupportedDomainError(MflabError):
    pass


class ResolutionError(MflabError):
    pass


class FieldFormatError(MflabError):
    pass


class DimensionMismatchError(MflabError):
    pass


class NonFiniteError(MflabError):
    pass


class TorusMeanError(MflabError):
    pass


class FunctionalUnsupportedError(MflabError):
    pass


class DomainMismatchError(MflabError):
    pass


class FunctionDomainError(MflabError):
    pass


class NotBistochasticError(MflabError):
    pass


class MatchingFailureError(MflabError):
    pass


class SizeMismatchError(MflabError):
    pass


class OverlapError(MflabError):
    pass


class CutoffError(MflabError):
    pass


class MatrixTooLargeError(MflabError):
    pass


class InfeasibleEnergyError(MflabError):
    pass


class NonConvergenceError(MflabError):
    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateFitError(MflabError):
    pass


class PreconditionError(MflabError):
    pass


class UnresolvedScaleError(MflabError):
    pass


class ParameterRangeError(MflabError):
    pass


class DivergenceError(MflabError):
    def __init__(self, message: str, last_residual: float = float('nan')):
        super().__init__(f"{message} (last residual {last_residual:.3e})")
        self.last_residual = last_residual


class SinkhornError(MflabError):
    pass


class LevelCapError(MflabError):
    pass


class WindowError(MflabError):
    pass


class ConfigError(MflabError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigRangeError(ConfigError):
    pass
