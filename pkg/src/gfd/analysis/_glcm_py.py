"""Pure-numpy pair-counting kernel; fallback when the compiled one is absent.

Callers validate that the offset fits inside the image.
"""

from __future__ import annotations

import numpy as np


def pair_counts(levels: np.ndarray, dr: int, dc: int, num_levels: int) -> np.ndarray:
    h, w = levels.shape
    r0, r1 = max(0, -dr), h - max(0, dr)
    c0, c1 = max(0, -dc), w - max(0, dc)
    a = levels[r0:r1, c0:c1].ravel().astype(np.int64)
    b = levels[r0 + dr : r1 + dr, c0 + dc : c1 + dc].ravel().astype(np.int64)
    flat = np.bincount(a * num_levels + b, minlength=num_levels * num_levels)
    return flat.reshape(num_levels, num_levels)
