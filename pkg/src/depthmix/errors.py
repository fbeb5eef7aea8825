"""Exception types shared across the toolkit.

Every error raised by the public API derives from DepthmixError so callers
can catch the whole family at the CLI boundary.
"""


class DepthmixError(Exception):
    """Base class for all toolkit errors."""


class EmptyDepth(DepthmixError):
    """An operation required at least one valid pixel and got none."""


class ShapeError(DepthmixError):
    """Grids that must share a shape do not."""


class InsufficientOverlap(DepthmixError):
    """Two masks overlap on fewer pixels than the operation needs."""


class InsufficientValid(DepthmixError):
    """A map has fewer valid pixels than a sampler or loss requires."""


class WeightError(DepthmixError):
    """Mixing weights violate the simplex constraint or reference the wrong models."""


class FactorError(DepthmixError):
    """A multiplicative rescaling factor is non-positive or non-finite."""


class ConfigError(DepthmixError):
    """A configuration value is outside its documented range."""


class EmptyResult(DepthmixError):
    """Synthesis produced a map with no valid pixels."""


class FormatError(DepthmixError):
    """A file is not in a supported depth/image format."""


class CorruptFile(DepthmixError):
    """A file matched a known format but its payload is truncated or invalid."""


class RangeError(DepthmixError):
    """Values cannot be represented in the requested output format."""


class ManifestError(DepthmixError):
    """A dataset manifest violates its schema."""


class EmptyDataset(DepthmixError):
    """A statistics run received no usable entries."""
