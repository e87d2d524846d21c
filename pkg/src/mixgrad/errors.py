"""Exception hierarchy shared by all mixgrad modules."""

from __future__ import annotations


class MixgradError(Exception):
    """Base class for every error raised by mixgrad."""


class InvalidInputError(MixgradError, ValueError):
    """Malformed arguments: non-finite values, bad shapes, out-of-range indices."""


class DegenerateSampleError(MixgradError):
    """A conditional density fell below the underflow cutoff.

    ``dimension`` is the zero-based index of the first offending dimension.
    """

    def __init__(self, dimension: int, message: str | None = None):
        self.dimension = int(dimension)
        super().__init__(message or f"conditional density underflow at dimension {self.dimension}")


class DegenerateRateError(MixgradError):
    """Too many degenerate samples were redrawn during an estimation run."""

    def __init__(self, n_degenerate: int, n_samples: int, max_rate: float):
        self.n_degenerate = n_degenerate
        self.n_samples = n_samples
        self.max_rate = max_rate
        super().__init__(
            f"{n_degenerate} degenerate samples out of {n_samples} exceeds the allowed rate {max_rate:g}"
        )


class NumericFailureError(MixgradError):
    """Quantile inversion could not bracket or converge."""


class LowAcceptanceError(MixgradError):
    """Rejection sampling produced no acceptances within its attempt budget."""

    def __init__(self, acceptance_probability: float, attempts: int):
        self.acceptance_probability = float(acceptance_probability)
        self.attempts = int(attempts)
        super().__init__(
            f"no acceptances after {attempts} attempts "
            f"(estimated acceptance probability {self.acceptance_probability:.3g})"
        )


class InvalidLossError(MixgradError):
    """A loss returned non-finite values or gradients."""


class AccuracyFailureError(MixgradError):
    """Quadrature did not reach the requested tolerance."""

    def __init__(self, achieved: float, requested: float):
        self.achieved = float(achieved)
        self.requested = float(requested)
        super().__init__(f"quadrature error bound {achieved:.3g} exceeds tolerance {requested:.3g}")
