"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right family
matters more than the message text: ConfigError -> 2, DataError -> 3,
GeometryError -> 4, everything else -> 1.
"""


class MtsEdgeError(Exception):
    """Base class for package errors."""


class ConfigError(MtsEdgeError, ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(MtsEdgeError, RuntimeError):
    """Dataset, checkpoint or image file problems."""


class GeometryError(MtsEdgeError, ValueError):
    """Shape or geometry contract violated (extents, channels, windows)."""


class TrainingError(MtsEdgeError, RuntimeError):
    """Optimization failure, e.g. non-finite gradients."""


class DegenerateSampleError(MtsEdgeError, ValueError):
    """Label with no countable pixels; the training loop skips the sample."""
