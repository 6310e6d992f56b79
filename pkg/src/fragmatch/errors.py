"""Exception and warning types shared across the package."""

from __future__ import annotations


class FragmatchError(Exception):
    """Base class for all package errors."""


class InputError(FragmatchError, ValueError):
    """Malformed or unresolvable input (unknown ids, bad CSV rows, missing data)."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


class DomainError(FragmatchError, ValueError):
    """A value outside the mathematical domain of a function (e.g. log of a non-positive distance)."""


class NonIbfInput(FragmatchError):
    """The starting matching of the FIG cycles algorithm is not IR, fair and balanced."""

    def __init__(self, message: str, *, failed: tuple[str, ...] = ()):
        self.failed = failed
        super().__init__(message)


class ConvergenceError(FragmatchError):
    """The optimizer stopped before meeting its tolerances. Carries the best iterate."""

    def __init__(self, message: str, *, best_x=None, best_value: float | None = None, result=None):
        self.best_x = best_x
        self.best_value = best_value
        self.result = result
        super().__init__(message)


class DecompositionUndefined(FragmatchError):
    """Improvement decomposition requested where it has no meaning."""


class BoundExceeded(FragmatchError):
    """Brute-force enumeration requested on a market above the size bounds."""


class DataInconsistencyWarning(UserWarning):
    """Observed data has zero probability under the model (contributes -inf)."""


class FlaggedValueWarning(UserWarning):
    """A numeric safeguard was triggered (std floor, divergent estimate, dropped facility)."""
