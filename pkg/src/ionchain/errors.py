"""Exception hierarchy.

Every error carries a stable CLI exit code so that command-line callers can
map failures without inspecting messages.
"""

from __future__ import annotations


class IonChainError(Exception):
    exit_code = 1


class InputError(IonChainError, ValueError):
    """Malformed or inconsistent input."""

    exit_code = 2


class DegenerateSystemError(InputError):
    """Two reference species cannot separate rf and static contributions."""


class InconsistentReferenceError(InputError):
    """Reference frequencies imply a clearly negative ponderomotive term."""


class InstabilityError(IonChainError):
    """Negative total curvature for some species on some axis."""

    exit_code = 3

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


class ModelAssumptionError(IonChainError):
    exit_code = 4


class TruncationError(IonChainError):
    """Fock-space truncation is too small for the requested dynamics."""

    exit_code = 5


class ContinuationError(IonChainError):
    """Equilibration failed, during a ramp, a scan or a plain minimization."""

    exit_code = 6

    def __init__(self, message: str, step: int | None = None, positions=None, partial=None):
        super().__init__(message)
        self.step = step
        self.positions = positions
        self.partial = partial


class ConvergenceError(ContinuationError):
    """Minimizer hit its iteration cap; ``positions`` holds the last iterate."""


class UnstableModeError(IonChainError):
    """A mode-based quantity was requested for a mode with omega^2 <= 0."""

    exit_code = 3
