"""Exception types shared across the package."""


class BifcurrentError(Exception):
    """Base class for all package-specific errors."""


class InvalidPointError(BifcurrentError, ValueError):
    """A coordinate is not a valid upper half-plane point."""


class DegenerateElementError(BifcurrentError, ValueError):
    """A matrix is singular, zero, or otherwise unusable."""


class ClassificationError(BifcurrentError, ValueError):
    """An operation received an element of the wrong conjugacy type."""


class ResourceLimitError(BifcurrentError, RuntimeError):
    """A configured cap (radius, node count, depth) would be exceeded."""


class ReductionFailureError(BifcurrentError, RuntimeError):
    """Fundamental-domain reduction failed to converge."""


class SamplerError(BifcurrentError, RuntimeError):
    """A stochastic sampler exceeded its rejection/refinement budget."""


class WordTrackingError(BifcurrentError, RuntimeError):
    """Incremental and full word reduction disagree beyond tolerance."""


class ChainError(BifcurrentError, RuntimeError):
    """The stopping-time chain exceeded its cycle budget without accepting."""


class ConfigError(BifcurrentError, ValueError):
    """An experiment configuration is invalid."""
