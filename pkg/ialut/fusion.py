"""
Basis IA-LUT sets and the weight-to-LUT fusion mapping.

A clip-adaptive table is the weighted sum of T basis tables that share one
set of grids. The basis tables are the learnable parameters; the T weights
come either from the caller or from per-clip free parameters fitted jointly
(see optimize.py).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeMismatchError
from .lut_core import Grid1D, IaLut4, Lut3

logger = logging.getLogger(__name__)

# Compact feature size of the content encoder the two-stage mapping replaces.
DEFAULT_FEATURE_PIXELS = 16
DEFAULT_FEATURE_CHANNELS = 64


@dataclass(frozen=True, eq=False)
class BasisLutSet:
    """T basis tables on shared grids; values has shape (T, L, ..., L, 3).

    Three grids make a set of plain 3D tables (the ablation baseline), four
    grids a set of IA-LUTs.
    """

    grids: tuple[Grid1D, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        grids = tuple(self.grids)
        if len(grids) not in (3, 4):
            raise ShapeMismatchError(f"basis grids must be 3 or 4 axes, got {len(grids)}")
        if len({len(g) for g in grids}) != 1:
            raise ShapeMismatchError("all basis grids must have the same length")
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        size = len(grids[0])
        expected_tail = (size,) * len(grids) + (3,)
        if values.ndim != len(grids) + 2 or values.shape[1:] != expected_tail or values.shape[0] < 1:
            raise ShapeMismatchError(
                f"basis values must have shape (T, {', '.join(map(str, expected_tail))}), "
                f"got {values.shape}"
            )
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return int(self.values.shape[0])

    @property
    def size(self) -> int:
        return len(self.grids[0])

    @property
    def is_4d(self) -> bool:
        return len(self.grids) == 4

    @property
    def param_count(self) -> int:
        return int(self.values.size)

    def table(self, t: int) -> IaLut4 | Lut3:
        return _make_lut(self.grids, self.values[t])


def _make_lut(grids: tuple[Grid1D, ...], values: np.ndarray) -> IaLut4 | Lut3:
    if len(grids) == 4:
        return IaLut4(grids, values)  # type: ignore[arg-type]
    return Lut3(grids, values)  # type: ignore[arg-type]


def _check_weights(basis: BasisLutSet, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != basis.count:
        raise ShapeMismatchError(
            f"weight vector has {w.shape[0]} entries but the basis holds {basis.count} tables"
        )
    if not np.all(np.isfinite(w)):
        raise FormatError("weight vector contains non-finite entries")
    return w


def fuse_values(basis_values: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Σ_t w_t · basis_t over raw arrays, accumulated in basis order."""
    fused = np.zeros(basis_values.shape[1:], dtype=np.float64)
    for t in range(basis_values.shape[0]):
        fused += w[t] * basis_values[t]
    return fused


def fuse(basis: BasisLutSet, w: np.ndarray) -> IaLut4 | Lut3:
    """Weighted sum of the basis tables. Values are not clamped here."""
    w = _check_weights(basis, w)
    return _make_lut(basis.grids, fuse_values(basis.values, w))


def export(basis: BasisLutSet, w: np.ndarray) -> IaLut4 | Lut3:
    """Fuse and clamp to [0, 1]; this is the table handed to the outside world."""
    return fuse(basis, w).clamped()


def identity_ialut(size: int) -> IaLut4:
    """Uniform-grid IA-LUT that returns the input colour for every e."""
    grid = Grid1D.uniform(size)
    p = grid.points
    rgb = np.stack(np.meshgrid(p, p, p, indexing="ij"), axis=-1)
    values = np.broadcast_to(rgb[:, :, :, None, :], (size,) * 4 + (3,))
    return IaLut4((grid,) * 4, np.array(values))


def identity_lut3(size: int) -> Lut3:
    grid = Grid1D.uniform(size)
    p = grid.points
    values = np.stack(np.meshgrid(p, p, p, indexing="ij"), axis=-1)
    return Lut3((grid,) * 3, values)


def init_basis(count: int, size: int, four_d: bool = True) -> tuple[BasisLutSet, np.ndarray]:
    """Identity first basis, zero remainder, one-hot weights.

    The initial fused table is therefore the identity transform.
    """
    if count < 1:
        raise FormatError("basis count must be ≥ 1")
    identity = identity_ialut(size) if four_d else identity_lut3(size)
    values = np.zeros((count,) + identity.values.shape, dtype=np.float64)
    values[0] = identity.values
    w = np.zeros(count, dtype=np.float64)
    w[0] = 1.0
    basis = BasisLutSet(identity.grids, values)
    logger.debug(
        "Initialised %d %s basis table(s) at L=%d (%d parameters)",
        count, "IA-LUT" if four_d else "3D LUT", size, basis.param_count,
    )
    return basis, w


def factorized_param_count(
    count: int,
    size: int,
    feature_pixels: int = DEFAULT_FEATURE_PIXELS,
    feature_channels: int = DEFAULT_FEATURE_CHANNELS,
) -> tuple[int, int]:
    """(direct, factorized) parameter counts of the feature-to-LUT mapping.

    A single dense layer from the P×Q feature vector to all 3·L⁴ entries
    costs P·Q·3·L⁴ parameters; routing it through T fusion weights costs
    T·(P·Q + 3·L⁴).
    """
    entries = 3 * size**4
    features = feature_pixels * feature_channels
    return features * entries, count * (features + entries)
