"""Exception types shared across the package.

Exit-code mapping used by the command line front end:
  ConfigError -> 2, solver-side failures -> 3, fit/inversion failures -> 4.
"""

from __future__ import annotations


class IonCavityError(Exception):
    """Base class for package errors."""


class ConfigError(IonCavityError):
    """Invalid configuration. Carries every violation found, not just the first."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        msg = "; ".join(self.violations)
        super().__init__(f"{len(self.violations)} config violation(s): {msg}")


class DimensionMismatchError(IonCavityError):
    """Operator/space dimension mismatch. Names the offending subsystem."""

    def __init__(self, subsystem: str, expected: int, got: int):
        self.subsystem = subsystem
        self.expected = expected
        self.got = got
        super().__init__(
            f"subsystem '{subsystem}': expected dimension {expected}, got {got}"
        )


class SpaceMismatchError(IonCavityError):
    """Two operators live on different Hilbert spaces."""


class SolverError(IonCavityError):
    """Integrator or linear-solver failure. Carries the last good time if known."""

    def __init__(self, message: str, last_good_time: float | None = None):
        self.last_good_time = last_good_time
        if last_good_time is not None:
            message = f"{message} (last good time t={last_good_time:.6g} us)"
        super().__init__(message)


class DegenerateSteadyStateError(SolverError):
    """Liouvillian null space has dimension > 1; no unique steady state."""

    def __init__(self, dimension: int, context: str = ""):
        self.dimension = dimension
        prefix = f"{context}: " if context else ""
        super().__init__(
            f"{prefix}degenerate steady state: null space dimension {dimension}"
        )


class FitConvergenceError(IonCavityError):
    """A fit failed to converge or the objective is unusable."""


class ExtrapolationError(IonCavityError):
    """Requested inversion point lies outside the computed curve."""
