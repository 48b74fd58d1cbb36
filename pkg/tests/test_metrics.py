from __future__ import annotations

import numpy as np
import pytest

from ialut.errors import ShapeMismatchError
from ialut.metrics import (
    PSNR_CAP,
    ab_series,
    ab_var,
    evaluate,
    luminance,
    mabd,
    md_ab,
    psnr,
    ssim,
)


def gray_video(levels) -> np.ndarray:
    """One 4×4 uniform grey frame per level."""
    return np.stack([np.full((4, 4, 3), level) for level in levels])


def windowed_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Direct loop over every valid 11×11 window."""
    radius = 5
    ax = np.arange(-radius, radius + 1)
    g = np.exp(-(ax**2) / (2 * 1.5**2))
    g /= g.sum()
    w = np.outer(g, g)
    c1, c2 = 0.01**2, 0.03**2
    scores = []
    for i in range(radius, x.shape[0] - radius):
        for j in range(radius, x.shape[1] - radius):
            px = x[i - radius:i + radius + 1, j - radius:j + radius + 1]
            py = y[i - radius:i + radius + 1, j - radius:j + radius + 1]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * px * px) - mx * mx
            vy = np.sum(w * py * py) - my * my
            cov = np.sum(w * px * py) - mx * my
            scores.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(scores))


class TestPsnr:
    def test_identical_is_capped(self, rng):
        v = rng.random((2, 5, 5, 3))
        assert psnr(v, v) == PSNR_CAP == 99.0

    def test_known_value(self):
        a = np.zeros((1, 4, 4, 3))
        b = np.full((1, 4, 4, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((1, 4, 4, 3)), np.zeros((2, 4, 4, 3)))


class TestSsim:
    def test_identical_is_one(self, rng):
        v = rng.random((2, 16, 16, 3))
        assert ssim(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_matches_windowed_oracle(self, rng):
        a = rng.random((1, 18, 20, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        expected = windowed_ssim(luminance(a[0]), luminance(b[0]))
        assert ssim(a, b) == pytest.approx(expected, abs=1e-10)

    def test_single_frame(self, rng):
        a = rng.random((16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0)

    def test_frame_smaller_than_window(self, rng):
        v = rng.random((1, 8, 8, 3))
        with pytest.raises(ShapeMismatchError):
            ssim(v, v)

    def test_degraded_scores_lower(self, rng):
        a = rng.random((1, 16, 16, 3))
        assert ssim(a, np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)) < 0.9


class TestConsistency:
    def test_luminance_weights(self):
        np.testing.assert_allclose(luminance(np.array([1.0, 0.0, 0.0])), 0.299)
        np.testing.assert_allclose(luminance(np.array([0.0, 1.0, 0.0])), 0.587)
        np.testing.assert_allclose(luminance(np.array([0.0, 0.0, 1.0])), 0.114)

    def test_ab_series(self):
        np.testing.assert_allclose(ab_series(gray_video([0.2, 0.4])), [0.2, 0.4])

    def test_static_video_is_exactly_zero(self, rng):
        frame = rng.random((6, 6, 3))
        pred = np.stack([frame] * 5)
        gt = np.stack([rng.random((6, 6, 3))] * 5)
        assert ab_var(pred, gt) == 0.0
        assert mabd(pred, gt) == 0.0

    def test_constant_offset_has_zero_variance(self):
        gt = gray_video([0.1, 0.3, 0.2, 0.5])
        pred = gray_video([0.2, 0.4, 0.3, 0.6])
        assert ab_var(pred, gt) == pytest.approx(0.0, abs=1e-12)

    def test_ab_var_known(self):
        pred = gray_video([0.1, 0.3])
        gt = gray_video([0.0, 0.0])
        # offsets 0.1, 0.3 -> variance 0.01, reported ×10³
        assert ab_var(pred, gt) == pytest.approx(10.0)

    def test_ab_var_alternating_offset(self):
        gt = gray_video([0.5] * 6)
        pred = gray_video([0.51, 0.49] * 3)
        # offsets ±0.01 -> variance 1e-4
        assert ab_var(pred, gt) == pytest.approx(0.1, rel=1e-6)

    def test_mabd_single_spike(self):
        pred = gray_video([0.0, 0.02, 0.0])
        gt = gray_video([0.0, 0.0, 0.0])
        assert mabd(pred, gt) == pytest.approx(20.0, rel=1e-9)

    def test_mabd_known(self):
        pred = gray_video([0.0, 0.1, 0.1])
        gt = gray_video([0.0, 0.0, 0.0])
        assert mabd(pred, gt) == pytest.approx(50.0)

    def test_needs_two_frames(self):
        v = gray_video([0.5])
        with pytest.raises(ShapeMismatchError):
            mabd(v, v)

    def test_frame_count_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ab_var(gray_video([0.1, 0.2]), gray_video([0.1, 0.2, 0.3]))

    def test_md_ab(self):
        clips = [gray_video([0.1, 0.3, 0.3]), gray_video([0.5, 0.4, 0.9])]
        assert md_ab(clips, 0) == pytest.approx((0.2 + 0.1) / 2)
        assert md_ab(clips, 1) == pytest.approx((0.0 + 0.5) / 2)

    def test_md_ab_pair_out_of_range(self):
        with pytest.raises(ShapeMismatchError):
            md_ab([gray_video([0.1, 0.2])], 1)


class TestEvaluate:
    def test_identical_clips(self, rng):
        v = rng.random((3, 12, 12, 3))
        report = evaluate(v, v)
        assert report.psnr == 99.0
        assert report.ssim == pytest.approx(1.0)
        assert report.ab_var == 0.0
        assert report.mabd == 0.0
        assert report.md_ab_pred == report.md_ab_gt
        assert len(report.md_ab_pred) == 2

    def test_kv_lines(self, rng):
        v = rng.random((2, 12, 12, 3))
        lines = evaluate(v, v).as_kv()
        assert lines[:4] == ["psnr=99.000000", "ssim=1.000000", "ab_var=0.000000", "mabd=0.000000"]
        assert lines[4].startswith("md_ab_pred_0=")
