"""
Enhancement quality and inter-frame brightness-consistency metrics.

Brightness is the Rec.601 luminance 0.299 R + 0.587 G + 0.114 B. The
consistency scores compare the per-frame average brightness (AB) series of
a prediction against its ground truth and are reported ×10³:

    AB(Var)  variance over frames of AB_pred(n) - AB_gt(n)
    MABD     mean over n of |ΔAB_pred(n) - ΔAB_gt(n)|, ΔAB(n) = AB(n+1) - AB(n)
    MD-AB    mean over clips of |AB(n+1) - AB(n)| for one fixed n (unscaled)

Absolute numbers use these global-mean definitions and are not comparable
with figures computed by other tools; orderings between methods are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from skimage.metrics import structural_similarity

from .errors import ShapeMismatchError

REC601 = np.array([0.299, 0.587, 0.114], dtype=np.float64)
PSNR_CAP = 99.0
CONSISTENCY_SCALE = 1e3

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def luminance(v: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (..., 3) array, in float64."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (3,):
        raise ShapeMismatchError(f"expected a trailing colour axis of 3, got {v.shape}")
    return v[..., 0] * REC601[0] + v[..., 1] * REC601[1] + v[..., 2] * REC601[2]


def _same_shape(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"videos differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM on luminance, 11×11 Gaussian window, averaged over frames."""
    a, b = _same_shape(a, b)
    if a.ndim == 3:
        a, b = a[None], b[None]
    ya, yb = luminance(a), luminance(b)
    if ya.shape[1] < SSIM_WINDOW or ya.shape[2] < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"frames of {ya.shape[2]}x{ya.shape[1]} are smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    # sigma 1.5 truncated at 3.5 sigma gives the 11-tap window
    scores = [
        structural_similarity(
            x,
            y,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            data_range=1.0,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
        for x, y in zip(ya, yb)
    ]
    return float(np.mean(scores))


def ab_series(v: np.ndarray) -> np.ndarray:
    """Per-frame mean luminance of an N×H×W×3 video."""
    y = luminance(v)
    return y.reshape(y.shape[0], -1).mean(axis=1)


def _paired_series(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ab_pred, ab_gt = ab_series(pred), ab_series(gt)
    if ab_pred.shape != ab_gt.shape:
        raise ShapeMismatchError(
            f"frame counts differ: {ab_pred.shape[0]} vs {ab_gt.shape[0]}"
        )
    if ab_pred.shape[0] < 2:
        raise ShapeMismatchError("brightness consistency needs at least 2 frames")
    return ab_pred, ab_gt


def ab_var(pred: np.ndarray, gt: np.ndarray) -> float:
    ab_pred, ab_gt = _paired_series(pred, gt)
    offset = ab_pred - ab_gt
    # shift by the first offset so a constant series is exactly zero
    offset = offset - offset[0]
    return float(np.var(offset)) * CONSISTENCY_SCALE


def mabd(pred: np.ndarray, gt: np.ndarray) -> float:
    ab_pred, ab_gt = _paired_series(pred, gt)
    return float(np.mean(np.abs(np.diff(ab_pred) - np.diff(ab_gt)))) * CONSISTENCY_SCALE


def md_ab(videos: Sequence[np.ndarray], pair_index: int) -> float:
    """Mean |AB(pair_index + 1) - AB(pair_index)| over a set of clips."""
    if not videos:
        raise ShapeMismatchError("md_ab needs at least one video")
    jumps = []
    for v in videos:
        series = ab_series(v)
        if not 0 <= pair_index < series.shape[0] - 1:
            raise ShapeMismatchError(
                f"pair index {pair_index} out of range for a {series.shape[0]}-frame video"
            )
        jumps.append(abs(series[pair_index + 1] - series[pair_index]))
    return float(np.mean(jumps))


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    ab_var: float
    mabd: float
    md_ab_pred: list[float] = field(default_factory=list)
    md_ab_gt: list[float] = field(default_factory=list)

    def as_kv(self) -> list[str]:
        lines = [
            f"psnr={self.psnr:.6f}",
            f"ssim={self.ssim:.6f}",
            f"ab_var={self.ab_var:.6f}",
            f"mabd={self.mabd:.6f}",
        ]
        for n, (p, g) in enumerate(zip(self.md_ab_pred, self.md_ab_gt)):
            lines.append(f"md_ab_pred_{n}={p:.6f}")
            lines.append(f"md_ab_gt_{n}={g:.6f}")
        return lines


def evaluate(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    """Every metric for one prediction/ground-truth clip pair."""
    pairs = range(np.asarray(pred).shape[0] - 1)
    return MetricReport(
        psnr=psnr(pred, gt),
        ssim=ssim(pred, gt),
        ab_var=ab_var(pred, gt),
        mabd=mabd(pred, gt),
        md_ab_pred=[md_ab([pred], n) for n in pairs],
        md_ab_gt=[md_ab([gt], n) for n in pairs],
    )
