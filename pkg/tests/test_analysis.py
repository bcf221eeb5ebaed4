"""Texture statistics: brute-force oracle, kernel parity, invariants."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import importlib

glcm_mod = importlib.import_module("gfd.analysis.glcm")

from gfd.analysis.glcm import (
    BACKEND,
    GlcmConfig,
    fingerprint_correlation_vector,
    glcm,
    glcm_correlation,
    offset_for,
    pair_labels,
    population_stats,
    quantize,
    to_gray,
)
from gfd.analysis import _glcm_py
from gfd.errors import ConfigError, DegenerateTextureError, ShapeError


def brute_force_glcm(levels, dr, dc, num_levels, symmetric):
    """Reference semantics, one pixel pair at a time."""
    h, w = levels.shape
    counts = np.zeros((num_levels, num_levels), dtype=np.float64)
    for r in range(h):
        for c in range(w):
            r2, c2 = r + dr, c + dc
            if 0 <= r2 < h and 0 <= c2 < w:
                counts[levels[r, c], levels[r2, c2]] += 1
    if symmetric:
        counts = counts + counts.T
    return counts / counts.sum()


class TestOffsets:
    def test_cardinal_and_diagonal_offsets(self):
        assert offset_for(1, 0.0) == (0, 1)
        assert offset_for(1, math.pi / 2) == (-1, 0)
        assert offset_for(1, math.pi / 4) == (-1, 1)
        assert offset_for(1, 3 * math.pi / 4) == (-1, -1)
        assert offset_for(2, 0.0) == (0, 2)

    def test_rounding_is_symmetric_in_sign(self):
        # half-away-from-zero: d*cos(3pi/4) = -1.414 -> -1, never -2
        assert offset_for(2, 3 * math.pi / 4) == (-1, -1)
        assert offset_for(2, math.pi / 4) == (-1, 1)


class TestQuantize:
    def test_range_relative_binning(self):
        img = np.array([[0.0, 0.5], [0.25, 1.0]])
        q = quantize(img, 4)
        assert q.tolist() == [[0, 2], [1, 3]]

    def test_constant_image_is_level_zero(self):
        q = quantize(np.full((3, 3), 7.5), 16)
        assert q.max() == 0

    def test_max_value_lands_in_top_level(self):
        q = quantize(np.linspace(0, 1, 64).reshape(8, 8), 64)
        assert q.max() == 63

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 100.0), st.floats(-50.0, 50.0))
    @settings(max_examples=40, deadline=None)
    def test_affine_invariance(self, seed, scale, shift):
        g = np.random.default_rng(seed)
        img = g.normal(size=(6, 6))
        assert np.array_equal(quantize(img, 16), quantize(img * scale + shift, 16))


class TestGlcmOracle:
    def test_matches_brute_force_exactly_on_random_images(self):
        cfg = GlcmConfig()
        g = np.random.default_rng(42)
        for _ in range(50):
            levels = g.integers(0, cfg.levels, size=(32, 32), dtype=np.int32)
            for d, a in cfg.pairs:
                dr, dc = offset_for(d, a)
                expected = brute_force_glcm(levels, dr, dc, cfg.levels, cfg.symmetric)
                assert np.array_equal(glcm(levels, d, a, cfg), expected)

    def test_kernel_backends_agree(self):
        g = np.random.default_rng(3)
        levels = np.ascontiguousarray(g.integers(0, 16, size=(20, 20), dtype=np.int32))
        for dr, dc in ((0, 2), (-2, 0), (-1, 1), (3, -2)):
            a = np.asarray(_glcm_py.pair_counts(levels, dr, dc, 16))
            b = np.asarray(glcm_mod._kernel.pair_counts(levels, dr, dc, 16))
            assert np.array_equal(a, b)

    def test_backend_is_reported(self):
        assert BACKEND in ("cython", "numpy")

    def test_sums_to_one(self):
        g = np.random.default_rng(0)
        img = g.normal(size=(16, 16))
        p = glcm(img, 2, 0.0)
        assert abs(p.sum() - 1.0) <= 1e-9

    def test_symmetric_mode_gives_symmetric_matrix(self):
        g = np.random.default_rng(1)
        p = glcm(g.normal(size=(12, 12)), 4, math.pi / 2)
        assert np.array_equal(p, p.T)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ShapeError):
            glcm(np.zeros((3, 4, 4)), 1, 0.0)
        with pytest.raises(ShapeError, match="does not fit"):
            glcm(np.zeros((4, 4)), 8, 0.0)
        with pytest.raises(ConfigError, match="levels"):
            glcm(np.full((4, 4), 99, dtype=np.int32), 1, 0.0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            GlcmConfig(distances=())
        with pytest.raises(ConfigError):
            GlcmConfig(levels=1)


class TestCorrelation:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=1000, deadline=None)
    def test_bounded_on_random_inputs(self, seed):
        g = np.random.default_rng(seed)
        img = g.normal(size=(8, 8))
        try:
            c = glcm_correlation(glcm(img, 1, 0.0))
        except DegenerateTextureError:
            return
        assert -1.0 <= c <= 1.0

    def test_stripes_along_the_offset_correlate_strongly(self):
        # horizontal bands, constant along each row: the theta=0 offset (0, 2)
        # always pairs a pixel with one of the same level
        img = np.tile(np.array([0.0, 0.0, 1.0, 1.0])[:, None], (4, 16))
        c = glcm_correlation(glcm(img, 2, 0.0))
        assert c >= 0.95

    def test_constant_image_is_degenerate(self):
        with pytest.raises(DegenerateTextureError):
            glcm_correlation(glcm(np.zeros((8, 8)), 1, 0.0))

    def test_checkerboard_anticorrelates_at_odd_offsets(self):
        img = np.indices((12, 12)).sum(axis=0) % 2.0
        c = glcm_correlation(glcm(img, 1, 0.0))
        assert c <= -0.95


class TestFingerprintVector:
    def test_vector_length_and_order(self):
        cfg = GlcmConfig()
        g = np.random.default_rng(5)
        v = fingerprint_correlation_vector(g.normal(size=(3, 40, 40)), cfg)
        assert v.shape == (16,)
        assert len(pair_labels(cfg)) == 16
        assert pair_labels(cfg)[0] == "d2_t0.00"

    def test_accepts_torch_tensors(self):
        v = fingerprint_correlation_vector(torch.randn(3, 40, 40))
        assert v.shape == (16,)

    def test_gray_reduction_is_channel_mean(self):
        fp = np.stack([np.zeros((4, 4)), np.ones((4, 4)), np.full((4, 4), 2.0)])
        assert np.array_equal(to_gray(fp), np.ones((4, 4)))


class TestPopulationStats:
    def test_single_vector_has_zero_variance(self):
        g = np.random.default_rng(6)
        stats = population_stats([g.normal(size=(3, 40, 40))])
        assert stats.count == 1 and stats.skipped == 0
        assert np.all(stats.variance == 0.0)
        assert np.all(stats.std == 0.0)

    def test_degenerate_members_are_skipped_not_fatal(self):
        g = np.random.default_rng(7)
        stats = population_stats([np.zeros((3, 8, 8)), g.normal(size=(3, 40, 40))])
        assert stats.count == 1 and stats.skipped == 1

    def test_all_degenerate_raises(self):
        with pytest.raises(DegenerateTextureError):
            population_stats([np.zeros((3, 8, 8))])

    def test_mean_matches_manual_average(self):
        g = np.random.default_rng(8)
        fps = [g.normal(size=(3, 40, 40)) for _ in range(3)]
        stats = population_stats(fps)
        manual = np.stack([fingerprint_correlation_vector(f) for f in fps]).mean(axis=0)
        assert np.allclose(stats.mean, manual)
