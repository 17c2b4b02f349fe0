"""Exception types shared across the package.

Every failure mode that callers are expected to handle gets its own class so
the CLI can map exceptions to stable exit codes.
"""


class NesimError(Exception):
    """Base class for all package-specific errors."""


class SingularMatrix(NesimError):
    """A linear solve hit a pivot below the singularity threshold."""


class NotSymmetric(NesimError):
    """Eigenvalue routine was handed a matrix that is not symmetric."""


class NoConvergence(NesimError):
    """An iterative routine exhausted its iteration budget."""


class NonFiniteState(NesimError):
    """An integration stage produced NaN or Inf (closed-loop divergence)."""


class Disconnected(NesimError):
    """The communication graph is not connected."""


class NotStronglyMonotone(NesimError):
    """The game's pseudo-gradient is not strongly monotone."""


class InvalidSpectrum(NesimError):
    """Recurrence coefficients whose roots are not distinct with zero real part."""


class SingularT(NesimError):
    """The conjugating matrix from the Sylvester solve is singular."""


class InvalidParameter(NesimError):
    """A model parameter violates its admissibility constraint."""


class EscalationExhausted(NesimError):
    """Gain escalation hit the round limit without a passing run."""


class Diverged(NesimError):
    """Closed-loop integration diverged; carries the failure time."""

    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"trajectory diverged at t={t:.6g}")


class ConfigError(NesimError):
    """Scenario file is malformed; message carries the offending field."""
