"""
Error hierarchy for NRSR.

Every error carries a short ``kind`` string that ends up in diagnostics
sidecars and in ``failed(reason)`` statuses.
"""


class NRSRError(Exception):
    """Base class for all NRSR errors."""

    kind = "error"


class ConfigError(NRSRError, ValueError):
    """Invalid configuration value or command-line flag."""

    kind = "config"


class InputFormatError(NRSRError, ValueError):
    """Malformed or inconsistent input file."""

    kind = "input-format"


class GeometryError(NRSRError):
    """Base class for projective-geometry failures."""

    kind = "geometry"


class DegenerateConfigurationError(GeometryError):
    """Point configuration cannot support the requested estimate."""

    kind = "degenerate-configuration"


class DegenerateSampleError(GeometryError):
    """Minimal sample whose design matrix is rank deficient."""

    kind = "degenerate-sample"


class ZeroParallaxError(GeometryError):
    """Two views share (almost) the same camera centre."""

    kind = "zero-parallax"


class UnderconstrainedError(GeometryError):
    """Too few or coplanar points for the requested solver."""

    kind = "underconstrained"


class NumericError(GeometryError):
    """Numerical routine failed to converge or produced non-finite output."""

    kind = "numeric"


class RigidityError(NRSRError):
    """Base class for rigidity-test failures."""

    kind = "rigidity"


class InsufficientPointsError(RigidityError):
    """Fewer correspondences than the minimal solver needs."""

    kind = "insufficient-points"


class NoValidSampleError(RigidityError):
    """Every drawn minimal sample was degenerate."""

    kind = "no-valid-sample"


class SamplingBudgetError(RigidityError):
    """Exhaustive enumeration would exceed the configured subset cap."""

    kind = "sampling-budget"


class ClusteringError(NRSRError):
    """Base class for view-clustering failures."""

    kind = "clustering"


class IsolatedNodeError(ClusteringError):
    """A view has zero total affinity."""

    kind = "isolated-node"


class GeneratorError(NRSRError):
    """Synthetic scene constraints could not be met within the retry cap."""

    kind = "generator"
