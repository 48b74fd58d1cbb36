"""
IA-LUT data structures, cell location and quadrilinear interpolation.

An IA-LUT maps (r, g, b, e) in [0, 1]^4 to an output colour. Every axis is
sampled by a strictly increasing grid spanning [0, 1]; the table stores one
RGB triple per grid point, indexed values[i, j, k, m, channel] with
i -> r, j -> g, k -> b, m -> e.

A query is answered from the enclosing unit lattice: each axis contributes a
pair of offsets (lower, upper) = ((x_hi - v) / w, (v - x_lo) / w) and the 16
corner coefficients are their tensor product. Inputs outside [0, 1] are
clamped onto the domain instead of mapping to black.

The per-pixel work lives in numba kernels shared by the scalar helpers
(`lut_apply`, `tri_apply`) and the vectorised `IaLut4.apply` /
`Lut3.apply`, so both paths produce bit-identical results. The row kernels
run under `prange`; every pixel writes only its own output slot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit, prange

from .errors import CorruptFrameError, FormatError, ShapeMismatchError

logger = logging.getLogger(__name__)


# ── Grid and table types ───────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Grid1D:
    """Sorted sample coordinates of one LUT axis, from 0 to 1 inclusive."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64).reshape(-1)
        if pts.size < 2:
            raise FormatError(f"grid needs at least 2 points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise FormatError("grid contains non-finite coordinates")
        if np.any(np.diff(pts) <= 0.0):
            raise FormatError("grid not increasing")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise FormatError(
                f"grid must span [0, 1], got [{pts[0]:.9g}, {pts[-1]:.9g}]"
            )
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, size: int) -> "Grid1D":
        if size < 2:
            raise FormatError("grid size must be ≥ 2")
        return cls(np.linspace(0.0, 1.0, size))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Grid1D) and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())


def _check_grids(grids: Sequence[Grid1D], axes: int) -> tuple[Grid1D, ...]:
    grids = tuple(grids)
    if len(grids) != axes:
        raise ShapeMismatchError(f"expected {axes} grids, got {len(grids)}")
    sizes = {len(g) for g in grids}
    if len(sizes) != 1:
        raise ShapeMismatchError(f"all grids must have the same length, got {sorted(sizes)}")
    return grids


def _check_values(values: np.ndarray, size: int, axes: int) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    expected = (size,) * axes + (3,)
    if arr.shape != expected:
        raise ShapeMismatchError(f"LUT values must have shape {expected}, got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class IaLut4:
    """4D intensity-aware LUT: grids for r, g, b, e plus an L⁴×3 value array."""

    grids: tuple[Grid1D, Grid1D, Grid1D, Grid1D]
    values: np.ndarray

    def __post_init__(self) -> None:
        grids = _check_grids(self.grids, 4)
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", _check_values(self.values, len(grids[0]), 4))

    @property
    def size(self) -> int:
        return len(self.grids[0])

    @property
    def param_count(self) -> int:
        return int(self.values.size)

    def clamped(self) -> "IaLut4":
        return IaLut4(self.grids, np.clip(self.values, 0.0, 1.0))

    def apply(self, rgb: np.ndarray, e: np.ndarray, clamp: bool = True) -> np.ndarray:
        """Evaluate many points at once; rgb is (..., 3), e matches rgb[..., 0]."""
        rgb = np.asarray(rgb)
        e = np.asarray(e)
        if rgb.shape[-1:] != (3,) or e.shape != rgb.shape[:-1]:
            raise ShapeMismatchError(
                f"rgb {rgb.shape} and intensity {e.shape} do not describe the same pixels"
            )
        rows, cols = _row_layout(rgb.shape[:-1])
        src = np.ascontiguousarray(rgb).reshape(rows, cols, 3)
        inten = np.ascontiguousarray(e).reshape(rows, cols)
        out = np.empty(src.shape, dtype=np.result_type(rgb.dtype, np.float32))
        bad = np.zeros(rows, dtype=np.bool_)
        g = self.grids
        _quad_rows(
            self.values, g[0].points, g[1].points, g[2].points, g[3].points,
            src, inten, out, bad, clamp,
        )
        if bad.any():
            raise CorruptFrameError(
                f"non-finite colour or intensity in {int(bad.sum())} row(s) of input"
            )
        return out.reshape(rgb.shape)

    def slice_at(self, e: float) -> "Lut3":
        """The 3D remainder of the table at a fixed intensity e."""
        r, g, b = (grid.points for grid in self.grids[:3])
        mesh = np.stack(np.meshgrid(r, g, b, indexing="ij"), axis=-1)
        inten = np.full(mesh.shape[:-1], float(np.clip(e, 0.0, 1.0)))
        return Lut3(self.grids[:3], self.apply(mesh, inten, clamp=True))


@dataclass(frozen=True, eq=False)
class Lut3:
    """Plain 3D colour LUT (r, g, b) -> rgb, the ablation baseline."""

    grids: tuple[Grid1D, Grid1D, Grid1D]
    values: np.ndarray

    def __post_init__(self) -> None:
        grids = _check_grids(self.grids, 3)
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", _check_values(self.values, len(grids[0]), 3))

    @property
    def size(self) -> int:
        return len(self.grids[0])

    @property
    def param_count(self) -> int:
        return int(self.values.size)

    def clamped(self) -> "Lut3":
        return Lut3(self.grids, np.clip(self.values, 0.0, 1.0))

    def apply(self, rgb: np.ndarray, clamp: bool = True) -> np.ndarray:
        rgb = np.asarray(rgb)
        if rgb.shape[-1:] != (3,):
            raise ShapeMismatchError(f"rgb must have a trailing axis of 3, got {rgb.shape}")
        rows, cols = _row_layout(rgb.shape[:-1])
        src = np.ascontiguousarray(rgb).reshape(rows, cols, 3)
        out = np.empty(src.shape, dtype=np.result_type(rgb.dtype, np.float32))
        bad = np.zeros(rows, dtype=np.bool_)
        g = self.grids
        _tri_rows(self.values, g[0].points, g[1].points, g[2].points, src, out, bad, clamp)
        if bad.any():
            raise CorruptFrameError(f"non-finite colour in {int(bad.sum())} row(s) of input")
        return out.reshape(rgb.shape)


@dataclass(frozen=True, eq=False)
class CornerWeights:
    """Interpolation coefficients of one query and the grid indices they hit.

    For an IA-LUT there are 16 corners (corners has shape (16, 4)); for a 3D
    LUT there are 8 (shape (8, 3)). Corner n has offsets given by the bits
    of n, most significant bit on the r axis.
    """

    coefficients: np.ndarray
    corners: np.ndarray


def _row_layout(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 0:
        return 1, 1
    if len(shape) == 1:
        return int(shape[0]), 1
    return int(np.prod(shape[:-1])), int(shape[-1])


# ── Kernels ────────────────────────────────────────────────────────────────────

@njit(cache=True)
def _locate(points, v):
    lo = 0
    hi = points.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if points[mid] <= v:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def _clamp01(v):
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


@njit(cache=True)
def _axis(points, v):
    c = _locate(points, v)
    lo = points[c]
    hi = points[c + 1]
    width = hi - lo
    return c, (hi - v) / width, (v - lo) / width, width


@njit(cache=True)
def _quad_point(values, gr, gg, gb, ge, r, g, b, e):
    i, wr0, wr1, _ = _axis(gr, r)
    j, wg0, wg1, _ = _axis(gg, g)
    k, wb0, wb1, _ = _axis(gb, b)
    m, we0, we1, _ = _axis(ge, e)
    o0 = 0.0
    o1 = 0.0
    o2 = 0.0
    for di in range(2):
        wi = wr0 if di == 0 else wr1
        for dj in range(2):
            wij = wi * (wg0 if dj == 0 else wg1)
            for dk in range(2):
                wijk = wij * (wb0 if dk == 0 else wb1)
                for dm in range(2):
                    w = wijk * (we0 if dm == 0 else we1)
                    o0 += w * values[i + di, j + dj, k + dk, m + dm, 0]
                    o1 += w * values[i + di, j + dj, k + dk, m + dm, 1]
                    o2 += w * values[i + di, j + dj, k + dk, m + dm, 2]
    return o0, o1, o2


@njit(cache=True)
def _tri_point(values, gr, gg, gb, r, g, b):
    i, wr0, wr1, _ = _axis(gr, r)
    j, wg0, wg1, _ = _axis(gg, g)
    k, wb0, wb1, _ = _axis(gb, b)
    o0 = 0.0
    o1 = 0.0
    o2 = 0.0
    for di in range(2):
        wi = wr0 if di == 0 else wr1
        for dj in range(2):
            wij = wi * (wg0 if dj == 0 else wg1)
            for dk in range(2):
                w = wij * (wb0 if dk == 0 else wb1)
                o0 += w * values[i + di, j + dj, k + dk, 0]
                o1 += w * values[i + di, j + dj, k + dk, 1]
                o2 += w * values[i + di, j + dj, k + dk, 2]
    return o0, o1, o2


@njit(parallel=True, cache=True)
def _quad_rows(values, gr, gg, gb, ge, rgb, inten, out, bad, clamp):
    for row in prange(rgb.shape[0]):
        for col in range(rgb.shape[1]):
            r = np.float64(rgb[row, col, 0])
            g = np.float64(rgb[row, col, 1])
            b = np.float64(rgb[row, col, 2])
            e = np.float64(inten[row, col])
            if not (np.isfinite(r) and np.isfinite(g) and np.isfinite(b) and np.isfinite(e)):
                bad[row] = True
                continue
            o0, o1, o2 = _quad_point(
                values, gr, gg, gb, ge,
                _clamp01(r), _clamp01(g), _clamp01(b), _clamp01(e),
            )
            if clamp:
                o0 = _clamp01(o0)
                o1 = _clamp01(o1)
                o2 = _clamp01(o2)
            out[row, col, 0] = o0
            out[row, col, 1] = o1
            out[row, col, 2] = o2


@njit(parallel=True, cache=True)
def _tri_rows(values, gr, gg, gb, rgb, out, bad, clamp):
    for row in prange(rgb.shape[0]):
        for col in range(rgb.shape[1]):
            r = np.float64(rgb[row, col, 0])
            g = np.float64(rgb[row, col, 1])
            b = np.float64(rgb[row, col, 2])
            if not (np.isfinite(r) and np.isfinite(g) and np.isfinite(b)):
                bad[row] = True
                continue
            o0, o1, o2 = _tri_point(values, gr, gg, gb, _clamp01(r), _clamp01(g), _clamp01(b))
            if clamp:
                o0 = _clamp01(o0)
                o1 = _clamp01(o1)
                o2 = _clamp01(o2)
            out[row, col, 0] = o0
            out[row, col, 1] = o1
            out[row, col, 2] = o2


@njit(parallel=True, cache=True)
def _quad_backward(values, gr, gg, gb, ge, rgb, inten, grad_out, n_chunks, grad_values, d_e):
    """Accumulate d(loss)/d(values) and d(loss)/d(e) for a batch of pixels.

    Pixels are split into n_chunks fixed ranges, each with its own partial
    buffer; partials are summed in chunk order, so the result does not depend
    on the thread count.
    """
    n = rgb.shape[0]
    size = values.shape[0]
    partial = np.zeros((n_chunks, size, size, size, size, 3))
    step = (n + n_chunks - 1) // n_chunks
    for ch in prange(n_chunks):
        acc = partial[ch]
        start = ch * step
        stop = min(n, start + step)
        for p in range(start, stop):
            i, wr0, wr1, _ = _axis(gr, _clamp01(rgb[p, 0]))
            j, wg0, wg1, _ = _axis(gg, _clamp01(rgb[p, 1]))
            k, wb0, wb1, _ = _axis(gb, _clamp01(rgb[p, 2]))
            m, we0, we1, ew = _axis(ge, _clamp01(inten[p]))
            g0 = grad_out[p, 0]
            g1 = grad_out[p, 1]
            g2 = grad_out[p, 2]
            de = 0.0
            for di in range(2):
                wi = wr0 if di == 0 else wr1
                for dj in range(2):
                    wij = wi * (wg0 if dj == 0 else wg1)
                    for dk in range(2):
                        wijk = wij * (wb0 if dk == 0 else wb1)
                        a = i + di
                        bb = j + dj
                        c = k + dk
                        for ch_ in range(3):
                            gc = g0 if ch_ == 0 else (g1 if ch_ == 1 else g2)
                            lo_v = values[a, bb, c, m, ch_]
                            hi_v = values[a, bb, c, m + 1, ch_]
                            de += gc * wijk * (hi_v - lo_v) / ew
                            acc[a, bb, c, m, ch_] += wijk * we0 * gc
                            acc[a, bb, c, m + 1, ch_] += wijk * we1 * gc
            d_e[p] = de
    flat = grad_values.reshape(-1)
    parts = partial.reshape(n_chunks, -1)
    for ch in range(n_chunks):
        for q in range(flat.shape[0]):
            flat[q] += parts[ch, q]


@njit(parallel=True, cache=True)
def _tri_backward(values, gr, gg, gb, rgb, grad_out, n_chunks, grad_values):
    n = rgb.shape[0]
    size = values.shape[0]
    partial = np.zeros((n_chunks, size, size, size, 3))
    step = (n + n_chunks - 1) // n_chunks
    for ch in prange(n_chunks):
        acc = partial[ch]
        start = ch * step
        stop = min(n, start + step)
        for p in range(start, stop):
            i, wr0, wr1, _ = _axis(gr, _clamp01(rgb[p, 0]))
            j, wg0, wg1, _ = _axis(gg, _clamp01(rgb[p, 1]))
            k, wb0, wb1, _ = _axis(gb, _clamp01(rgb[p, 2]))
            for di in range(2):
                wi = wr0 if di == 0 else wr1
                for dj in range(2):
                    wij = wi * (wg0 if dj == 0 else wg1)
                    for dk in range(2):
                        w = wij * (wb0 if dk == 0 else wb1)
                        for ch_ in range(3):
                            acc[i + di, j + dj, k + dk, ch_] += w * grad_out[p, ch_]
    flat = grad_values.reshape(-1)
    parts = partial.reshape(n_chunks, -1)
    for ch in range(n_chunks):
        for q in range(flat.shape[0]):
            flat[q] += parts[ch, q]


# ── Scalar operations ──────────────────────────────────────────────────────────

def locate_cell(grid: Grid1D, v: float) -> int:
    """Binary search for c with points[c] <= v <= points[c + 1].

    v = 1 resolves to the last cell (L - 2); a v landing exactly on an
    interior grid point resolves to that point's own index.
    """
    return int(_locate(grid.points, float(v)))


def _checked_point(point: Sequence[float], axes: int) -> np.ndarray:
    arr = np.asarray(point, dtype=np.float64).reshape(-1)
    if arr.shape != (axes,):
        raise ShapeMismatchError(f"expected a {axes}-component point, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise CorruptFrameError(f"non-finite lookup input {arr.tolist()}")
    return np.clip(arr, 0.0, 1.0)


def _axis_offsets(grid: Grid1D, c: int, v: float) -> tuple[float, float, float]:
    if not 0 <= c <= len(grid) - 2:
        raise FormatError(f"cell index {c} outside [0, {len(grid) - 2}]")
    lo, hi = grid.points[c], grid.points[c + 1]
    if not lo <= v <= hi:
        raise FormatError(f"coordinate {v!r} outside cell [{lo!r}, {hi!r}]")
    width = hi - lo
    return (hi - v) / width, (v - lo) / width, width


def _tensor_weights(
    grids: Sequence[Grid1D], cell: Sequence[int], point: np.ndarray
) -> CornerWeights:
    axes = len(grids)
    pairs = [_axis_offsets(g, int(c), float(v))[:2] for g, c, v in zip(grids, cell, point)]
    n_corners = 1 << axes
    coefficients = np.empty(n_corners, dtype=np.float64)
    corners = np.empty((n_corners, axes), dtype=np.int64)
    for n in range(n_corners):
        w = 1.0
        for a in range(axes):
            bit = (n >> (axes - 1 - a)) & 1
            w = w * pairs[a][bit]
            corners[n, a] = int(cell[a]) + bit
        coefficients[n] = w
    return CornerWeights(coefficients=coefficients, corners=corners)


def quad_coefficients(
    lut: IaLut4, cell: Sequence[int], point: Sequence[float]
) -> CornerWeights:
    """The 16 quadrilinear coefficients of point inside the given cell."""
    return _tensor_weights(lut.grids, cell, _checked_point(point, 4))


def _cell_of(grids: Sequence[Grid1D], point: np.ndarray) -> tuple[int, ...]:
    return tuple(locate_cell(g, v) for g, v in zip(grids, point))


def lut_apply(lut: IaLut4, point: Sequence[float]) -> np.ndarray:
    """Look up one (r, g, b, e) point; output clamped to [0, 1]^3."""
    p = _checked_point(point, 4)
    g = lut.grids
    out = _quad_point(
        lut.values, g[0].points, g[1].points, g[2].points, g[3].points,
        p[0], p[1], p[2], p[3],
    )
    return np.clip(np.array(out, dtype=np.float64), 0.0, 1.0)


def lut_apply_grad(
    lut: IaLut4, point: Sequence[float], clamp: bool = True
) -> tuple[np.ndarray, CornerWeights, np.ndarray]:
    """Output plus the analytic derivatives of the (pre-clamp) interpolant.

    d_values holds d(output_c)/d(corner value, channel c), the same for all
    three channels. d_e is d(output)/de inside the located cell, i.e. the
    one-sided derivative when e sits on a grid point.
    """
    p = _checked_point(point, 4)
    cell = _cell_of(lut.grids, p)
    weights = _tensor_weights(lut.grids, cell, p)
    corner_values = lut.values[tuple(weights.corners.T)]
    output = weights.coefficients @ corner_values

    # e is the last axis: corners 2n and 2n + 1 share their rgb position
    rgb_weights = _tensor_weights(lut.grids[:3], cell[:3], p[:3]).coefficients
    ew = _axis_offsets(lut.grids[3], cell[3], float(p[3]))[2]
    d_e = np.zeros(3, dtype=np.float64)
    for n in range(8):
        lower, upper = weights.corners[2 * n], weights.corners[2 * n + 1]
        d_e += rgb_weights[n] * (lut.values[tuple(upper)] - lut.values[tuple(lower)]) / ew
    if clamp:
        output = np.clip(output, 0.0, 1.0)
    return output, weights, d_e


def tri_coefficients(
    lut3: Lut3, cell: Sequence[int], point: Sequence[float]
) -> CornerWeights:
    return _tensor_weights(lut3.grids, cell, _checked_point(point, 3))


def tri_apply(lut3: Lut3, rgb: Sequence[float]) -> np.ndarray:
    """Trilinear lookup in a 3D LUT; output clamped to [0, 1]^3."""
    p = _checked_point(rgb, 3)
    g = lut3.grids
    out = _tri_point(lut3.values, g[0].points, g[1].points, g[2].points, p[0], p[1], p[2])
    return np.clip(np.array(out, dtype=np.float64), 0.0, 1.0)


def tri_apply_grad(
    lut3: Lut3, rgb: Sequence[float], clamp: bool = True
) -> tuple[np.ndarray, CornerWeights]:
    p = _checked_point(rgb, 3)
    weights = _tensor_weights(lut3.grids, _cell_of(lut3.grids, p), p)
    output = weights.coefficients @ lut3.values[tuple(weights.corners.T)]
    if clamp:
        output = np.clip(output, 0.0, 1.0)
    return output, weights


# ── Batched backward passes (used by the fitting loop) ─────────────────────────

def quad_backward(
    lut: IaLut4,
    rgb: np.ndarray,
    e: np.ndarray,
    grad_out: np.ndarray,
    n_chunks: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """Pull grad_out (P, 3) back onto the table values and the intensities."""
    rgb = np.ascontiguousarray(rgb, dtype=np.float64).reshape(-1, 3)
    e = np.ascontiguousarray(e, dtype=np.float64).reshape(-1)
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(-1, 3)
    grad_values = np.zeros_like(lut.values)
    d_e = np.zeros(e.shape[0], dtype=np.float64)
    chunks = max(1, min(int(n_chunks), rgb.shape[0]))
    g = lut.grids
    _quad_backward(
        lut.values, g[0].points, g[1].points, g[2].points, g[3].points,
        rgb, e, grad_out, chunks, grad_values, d_e,
    )
    return grad_values, d_e


def tri_backward(
    lut3: Lut3, rgb: np.ndarray, grad_out: np.ndarray, n_chunks: int = 4
) -> np.ndarray:
    rgb = np.ascontiguousarray(rgb, dtype=np.float64).reshape(-1, 3)
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(-1, 3)
    grad_values = np.zeros_like(lut3.values)
    chunks = max(1, min(int(n_chunks), rgb.shape[0]))
    g = lut3.grids
    _tri_backward(lut3.values, g[0].points, g[1].points, g[2].points, rgb, grad_out, chunks, grad_values)
    return grad_values
