"""Exception types raised across the toolkit."""


class WavefieldError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(WavefieldError):
    """Invalid scene geometry (degenerate wall, exclusion outside extents, ...)."""


class SingularityError(WavefieldError):
    """Evaluation point coincides with a (virtual) source."""


class DegenerateChannelError(WavefieldError):
    """Operation undefined for an all-zero channel matrix."""


class DimensionMismatchError(WavefieldError):
    """Channel matrices of incompatible shapes."""


class IllConditionedFitError(WavefieldError):
    """Surrogate interpolation system could not be solved reliably."""


class EmptyRegionError(WavefieldError):
    """The feasible location region (extents minus exclusions) is empty."""


class EmptyDatabaseError(WavefieldError):
    """Fingerprint database holds no records."""
