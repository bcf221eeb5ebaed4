"""GAN fingerprint disentanglement: training, attribution, and texture analysis."""

from .errors import (
    BatchCompositionError,
    CheckpointError,
    ConfigError,
    DegenerateTextureError,
    GfdError,
    ManifestError,
    ShapeError,
    WeightsUnavailableError,
)

__version__ = "0.1.0"

__all__ = [
    "GfdError",
    "ManifestError",
    "ConfigError",
    "ShapeError",
    "CheckpointError",
    "BatchCompositionError",
    "DegenerateTextureError",
    "WeightsUnavailableError",
    "__version__",
]
