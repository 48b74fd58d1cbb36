"""
Reconstruction and regularisation losses, each returned with its gradient.

Reconstruction terms are means over elements; the table regularisers are
unnormalised sums over grid entries, which is what the default weights
(alpha_s = 1e-4, alpha_m = 10) are calibrated against.

The regularisers work on any table value array whose leading axes are grid
axes and whose last axis holds the three channels, so they serve both the
4D IA-LUT and the 3D baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeMismatchError
from .lut_core import IaLut4, Lut3


@dataclass(frozen=True)
class LossWeights:
    alpha_s: float = 1e-4
    alpha_m: float = 10.0
    charbonnier_eps: float = 1e-3

    def __post_init__(self) -> None:
        if self.alpha_s < 0 or self.alpha_m < 0:
            raise FormatError("regulariser weights alpha_s and alpha_m must be ≥ 0")
        if self.charbonnier_eps <= 0:
            raise FormatError("charbonnier_eps must be > 0")


def _pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} and target {gt.shape} differ in shape")
    if pred.size == 0:
        raise ShapeMismatchError("cannot compute a loss over empty tensors")
    return pred, gt


def charbonnier(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-3) -> tuple[float, np.ndarray]:
    """mean(sqrt((pred - gt)^2 + eps^2)) and its gradient wrt pred."""
    pred, gt = _pair(pred, gt)
    diff = pred - gt
    root = np.sqrt(diff * diff + eps * eps)
    return float(root.mean()), diff / root / diff.size


def l2(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient wrt pred."""
    pred, gt = _pair(pred, gt)
    diff = pred - gt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _values(lut: IaLut4 | Lut3 | np.ndarray) -> np.ndarray:
    values = lut.values if isinstance(lut, (IaLut4, Lut3)) else np.asarray(lut, dtype=np.float64)
    if values.ndim < 2 or values.shape[-1] != 3:
        raise ShapeMismatchError(f"table values need a trailing channel axis of 3, got {values.shape}")
    return values


def _forward_diffs(values: np.ndarray):
    """Yield (lower slice, upper slice, V[x_next] - V[x]) for each grid axis."""
    for axis in range(values.ndim - 1):
        lower = [slice(None)] * values.ndim
        upper = [slice(None)] * values.ndim
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        lower_t, upper_t = tuple(lower), tuple(upper)
        yield lower_t, upper_t, values[upper_t] - values[lower_t]


def smooth_lut(lut: IaLut4 | Lut3 | np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared forward differences along every grid axis."""
    values = _values(lut)
    loss = 0.0
    grad = np.zeros_like(values, dtype=np.float64)
    for lower, upper, diff in _forward_diffs(values):
        loss += float(np.sum(diff * diff))
        grad[upper] += 2.0 * diff
        grad[lower] -= 2.0 * diff
    return loss, grad


def mono_lut(lut: IaLut4 | Lut3 | np.ndarray) -> tuple[float, np.ndarray]:
    """Hinge penalty on every stored value that decreases along an axis.

    The subgradient is 0 at exact ties.
    """
    values = _values(lut)
    loss = 0.0
    grad = np.zeros_like(values, dtype=np.float64)
    for lower, upper, diff in _forward_diffs(values):
        drop = -diff
        violated = drop > 0.0
        loss += float(np.sum(drop[violated]))
        hit = violated.astype(np.float64)
        grad[lower] += hit
        grad[upper] -= hit
    return loss, grad


def weight_l2(w: np.ndarray) -> tuple[float, np.ndarray]:
    w = np.asarray(w, dtype=np.float64)
    return float(np.sum(w * w)), 2.0 * w


def total_loss(
    recon: float,
    lut_terms: tuple[float, float],
    w_term: float,
    lw: LossWeights,
) -> float:
    """recon + alpha_s * (smooth + weight term) + alpha_m * mono."""
    smooth, mono = lut_terms
    return recon + lw.alpha_s * (smooth + w_term) + lw.alpha_m * mono
