"""Exception types shared across the package."""


class TruncaugError(Exception):
    """Base class for all package errors."""


class ConfigError(TruncaugError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NumericalError(TruncaugError):
    """Numerical failure during a solve or simulation (CLI exit code 3)."""


class GeneralModeError(TruncaugError):
    """Operation requires an enumerable kernel but got a sampler-only one."""


class KernelValidationError(TruncaugError):
    """A kernel row violates stochasticity beyond tolerance."""


class StateOutsideTruncation(TruncaugError):
    """State is not a member of the requested truncation set."""


class ReentryOutsideA1(TruncaugError):
    """Re-entry distribution places mass outside the first truncation set."""


class NonFiniteLevelSet(TruncaugError):
    """Sublevel-set enumeration exceeded the configured state cap."""


class ReducibleKernel(NumericalError):
    """More than one recurrent class detected; stationary solve is ambiguous."""


class DimensionMismatch(TruncaugError):
    """Matrix/state-list shapes do not agree."""


class IterationLimit(NumericalError):
    """Iterative solve hit its iteration cap. Carries the last iterate."""

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class UnboundedG(TruncaugError):
    """Lyapunov function not finite on a required state."""


class SingularSystem(NumericalError):
    """First-passage linear system is numerically singular."""


class NoStabilization(NumericalError):
    """r-regularity ladder exhausted without the values stabilizing."""

    def __init__(self, message, ladder_values=None):
        super().__init__(message)
        self.ladder_values = ladder_values or []


class NegativeResidual(TruncaugError):
    """Split residual kernel has a negative entry: invalid minorization cert."""


class CycleLengthCap(NumericalError):
    """A regenerative cycle exceeded the step cap (likely non-recurrence)."""


class InsufficientCycles(TruncaugError):
    """Ratio estimation needs at least two cycles."""


class InvalidCert(TruncaugError):
    """Minorization certificate inconsistent with the kernel."""


class DegenerateDenominator(NumericalError):
    """Estimated survival probability is zero in the ratio formula."""


class ZeroExitRate(TruncaugError):
    """Jump process state with no outgoing rate."""


class ParamOutOfRange(TruncaugError):
    """Model parameter outside its admissible range."""


class MinorizationRejected(TruncaugError):
    """Declared continuous-state minorization failed its empirical check."""
