"""Exception types shared across the package."""


class GfdError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(GfdError):
    """Dataset manifest is missing, malformed, or inconsistent."""


class ConfigError(GfdError):
    """Invalid or unknown configuration values."""


class ShapeError(GfdError):
    """Tensor shape violates an operation's contract."""


class CheckpointError(GfdError):
    """Checkpoint directory is missing, incomplete, or fails integrity checks."""


class BatchCompositionError(GfdError):
    """Training batch lacks a real image while compositing is enabled."""


class DegenerateTextureError(GfdError):
    """Co-occurrence statistics are undefined (zero marginal variance)."""


class WeightsUnavailableError(GfdError):
    """Requested pretrained weights are not present locally."""
