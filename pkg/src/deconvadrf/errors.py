"""Exception types shared across the package."""


class DeconvAdrfError(Exception):
    """Base class for all package-specific errors."""


class OverflowRisk(DeconvAdrfError):
    """Gaussian deconvolution exponent would overflow: bandwidth too small
    for the noise level."""


class InsufficientReplicates(DeconvAdrfError):
    """Fewer replicate pairs than required to estimate the error CF."""


class AllWeightsZero(DeconvAdrfError):
    """Every (truncated) kernel weight vanished: evaluation point is outside
    the effective support of the data."""


class DegenerateCovariate(DeconvAdrfError):
    """A covariate column is constant and cannot be scaled."""


class BasisOverflow(DeconvAdrfError):
    """Power-series degree needed to reach K exceeds the supported maximum."""


class DomainViolation(DeconvAdrfError):
    """lambda' u_K(X_i) left the domain of the GEL criterion function."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"criterion domain violated at row {index} (v={value:.6g})")


class NoiseExceedsSignal(DeconvAdrfError):
    """Declared measurement-error variance is at least the variance of the
    observed treatment."""


class ExtrapolationDegenerate(DeconvAdrfError):
    """All second-stage SIMEX bandwidths coincide; extrapolation kernel
    weights are undefined."""


class TooManySkipped(DeconvAdrfError):
    """More than the tolerated share of grid points were skipped when
    integrating a curve."""


class DegenerateVariance(DeconvAdrfError):
    """Estimated pointwise variance is exactly zero at a non-skipped point."""


class InputDataError(DeconvAdrfError):
    """Malformed input data (CSV parsing, missing columns, non-finite rows)."""
