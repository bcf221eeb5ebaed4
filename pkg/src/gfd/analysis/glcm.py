"""Gray-level co-occurrence texture statistics over fingerprints.

A fingerprint is reduced to a gray image, quantized over its own intensity
range, and summarized by the co-occurrence correlation at every configured
(distance, angle) pair. The 16-value vectors are then aggregated per source
into mean and variance profiles.

Pair counting has a compiled kernel with a pure-numpy fallback; the choice
happens once at import and is exposed as BACKEND.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError, DegenerateTextureError, ShapeError

try:
    from . import _glcm_cy as _kernel

    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on the build environment
    from . import _glcm_py as _kernel

    BACKEND = "numpy"

DEFAULT_DISTANCES = (2, 4, 8, 16)
DEFAULT_ANGLES = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)


@dataclass(frozen=True)
class GlcmConfig:
    distances: tuple[int, ...] = DEFAULT_DISTANCES
    angles: tuple[float, ...] = DEFAULT_ANGLES
    levels: int = 64
    symmetric: bool = True

    def __post_init__(self):
        if not self.distances or any(d < 1 for d in self.distances):
            raise ConfigError("distances must be positive integers")
        if not self.angles:
            raise ConfigError("at least one angle is required")
        if self.levels < 2:
            raise ConfigError("need at least two gray levels")

    @property
    def pairs(self) -> list[tuple[int, float]]:
        """Row-major (distance, angle) order of the correlation vector."""
        return [(d, a) for d in self.distances for a in self.angles]


def _iround(x: float) -> int:
    """Round half away from zero, so offsets are symmetric in sign."""
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def offset_for(distance: int, angle: float) -> tuple[int, int]:
    """(row, col) step for a (d, theta) pair.

    Angles follow the usual mathematical convention while rows grow
    downward, hence the negated sine.
    """
    return -_iround(distance * math.sin(angle)), _iround(distance * math.cos(angle))


def quantize(img: np.ndarray, levels: int) -> np.ndarray:
    """Uniform binning of the image's own [min, max] range into `levels`
    integer levels. A constant image lands entirely on level 0."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if hi == lo:
        return np.zeros(img.shape, dtype=np.int32)
    idx = np.floor((img - lo) / (hi - lo) * levels)
    return np.minimum(idx, levels - 1).astype(np.int32)


def glcm(
    img: np.ndarray, distance: int, angle: float, cfg: GlcmConfig | None = None
) -> np.ndarray:
    """Normalized co-occurrence matrix of a 2-D image at one offset.

    Floating-point input is quantized first; integer input is taken as
    already-quantized levels in [0, cfg.levels).
    """
    cfg = cfg or GlcmConfig()
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-D gray image, got shape {img.shape}")
    if np.issubdtype(img.dtype, np.floating):
        levels = quantize(img, cfg.levels)
    else:
        levels = img.astype(np.int32)
        if levels.min() < 0 or levels.max() >= cfg.levels:
            raise ConfigError(
                f"integer input must hold levels in [0, {cfg.levels})"
            )
    dr, dc = offset_for(distance, angle)
    h, w = levels.shape
    if abs(dr) >= h or abs(dc) >= w:
        raise ShapeError(
            f"offset ({dr}, {dc}) does not fit a {h}x{w} image"
        )
    counts = np.asarray(
        _kernel.pair_counts(np.ascontiguousarray(levels), dr, dc, cfg.levels),
        dtype=np.float64,
    )
    if cfg.symmetric:
        counts = counts + counts.T
    return counts / counts.sum()


def glcm_correlation(p: np.ndarray) -> float:
    """Correlation of the level-pair distribution; in [-1, 1] by
    Cauchy-Schwarz. Raises when either marginal has zero variance."""
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    i = np.arange(n, dtype=np.float64)
    pi, pj = p.sum(axis=1), p.sum(axis=0)
    mu_i, mu_j = float(i @ pi), float(i @ pj)
    var_i = float(((i - mu_i) ** 2) @ pi)
    var_j = float(((i - mu_j) ** 2) @ pj)
    denom = math.sqrt(var_i) * math.sqrt(var_j)
    if denom == 0.0:
        raise DegenerateTextureError("zero variance in the gray-level marginals")
    corr = float((i - mu_i) @ p @ (i - mu_j)) / denom
    return min(1.0, max(-1.0, corr))


def to_gray(fingerprint: np.ndarray | torch.Tensor) -> np.ndarray:
    """Channel-mean gray reduction of a [3, H, W] fingerprint."""
    if isinstance(fingerprint, torch.Tensor):
        fingerprint = fingerprint.detach().cpu().numpy()
    arr = np.asarray(fingerprint, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim != 3:
        raise ShapeError(f"expected [C, H, W] or [H, W], got shape {arr.shape}")
    return arr.mean(axis=0)


def fingerprint_correlation_vector(
    fingerprint: np.ndarray | torch.Tensor, cfg: GlcmConfig | None = None
) -> np.ndarray:
    """The 16-value texture signature of one fingerprint, ordered row-major
    over (distance, angle)."""
    cfg = cfg or GlcmConfig()
    levels = quantize(to_gray(fingerprint), cfg.levels)
    return np.array(
        [glcm_correlation(glcm(levels, d, a, cfg)) for d, a in cfg.pairs],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class PopulationStats:
    """Elementwise mean and population variance of correlation vectors."""

    mean: np.ndarray
    variance: np.ndarray
    count: int
    skipped: int

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def population_stats(
    fingerprints, cfg: GlcmConfig | None = None
) -> PopulationStats:
    """Aggregate texture statistics over a fingerprint population.

    Degenerate fingerprints (constant, or any zero-variance marginal) are
    skipped and counted rather than poisoning the aggregate. Variance is the
    population convention (divide by n), so a single vector has variance 0.
    """
    cfg = cfg or GlcmConfig()
    vectors = []
    skipped = 0
    for fp in fingerprints:
        try:
            vectors.append(fingerprint_correlation_vector(fp, cfg))
        except DegenerateTextureError:
            skipped += 1
    if not vectors:
        raise DegenerateTextureError("no fingerprint produced a valid vector")
    stack = np.stack(vectors)
    return PopulationStats(
        mean=stack.mean(axis=0),
        variance=stack.var(axis=0),
        count=len(vectors),
        skipped=skipped,
    )


def pair_labels(cfg: GlcmConfig | None = None) -> list[str]:
    """Human-readable labels matching the vector ordering."""
    cfg = cfg or GlcmConfig()
    return [f"d{d}_t{a:.2f}" for d, a in cfg.pairs]
