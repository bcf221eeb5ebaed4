"""Compare the compiled and pure-python co-occurrence kernels.

Counts pixel pairs for every configured (distance, angle) offset over a
batch of random quantized images, once per backend, and reports wall time
and the speedup. Both backends must produce identical counts.

Usage: python3 benchmarks/bench_glcm.py [--images N] [--size S] [--repeats R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gfd.analysis import _glcm_py
from gfd.analysis.glcm import GlcmConfig, offset_for

try:
    from gfd.analysis import _glcm_cy
except ImportError:
    _glcm_cy = None


def run(kernel, images, offsets, levels) -> float:
    t0 = time.perf_counter()
    for img in images:
        for dr, dc in offsets:
            kernel.pair_counts(img, dr, dc, levels)
    return time.perf_counter() - t0


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=100)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = GlcmConfig()
    rng = np.random.default_rng(args.seed)
    images = [
        np.ascontiguousarray(
            rng.integers(0, cfg.levels, size=(args.size, args.size), dtype=np.int32)
        )
        for _ in range(args.images)
    ]
    offsets = [offset_for(d, a) for d, a in cfg.pairs]

    print(
        f"{args.images} images of {args.size}x{args.size}, "
        f"{len(offsets)} offsets, levels={cfg.levels}, best of {args.repeats}"
    )

    py_time = min(run(_glcm_py, images, offsets, cfg.levels) for _ in range(args.repeats))
    print(f"numpy  kernel: {py_time:.3f}s")

    if _glcm_cy is None:
        print("cython kernel: not built (GFD_SKIP_EXT or missing compiler)")
        return 0

    cy_time = min(run(_glcm_cy, images, offsets, cfg.levels) for _ in range(args.repeats))
    print(f"cython kernel: {cy_time:.3f}s")
    print(f"speedup: {py_time / cy_time:.2f}x")

    for img in images[:5]:
        for dr, dc in offsets:
            a = np.asarray(_glcm_py.pair_counts(img, dr, dc, cfg.levels))
            b = np.asarray(_glcm_cy.pair_counts(img, dr, dc, cfg.levels))
            assert np.array_equal(a, b), f"kernel mismatch at offset ({dr}, {dc})"
    print("outputs identical on the checked subset")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
