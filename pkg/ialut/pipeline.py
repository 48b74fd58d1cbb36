"""
End-to-end video transformation.

    frames ──► make_intensity ──► transform_video ──► denoise_hook ──► frames
                 (constant,         (one fused lookup +     (optional external
                  luma, file)        interpolation pass)     command)

Every output pixel depends only on its own (r, g, b, e), so frames are
processed independently and the result does not depend on how many worker
threads ran the kernel.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal

import numba
import numpy as np

from .clients.denoiser import run_denoiser
from .config import Settings
from .errors import FormatError, ShapeMismatchError
from .lut_core import Grid1D, IaLut4, Lut3
from .media_io import read_intensity
from .metrics import luminance

logger = logging.getLogger(__name__)

BENCH_GRID_SIZE = 33


# ── Intensity sources ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class IntensitySource:
    """Where the per-pixel enhancement intensity comes from.

    constant  every pixel gets `value`
    luma      e = 1 - Rec.601 luminance, darker pixels get larger e
    file      maps read from an intensity directory at `path`
    """

    kind: Literal["constant", "luma", "file"]
    value: float = 0.5
    path: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "luma", "file"):
            raise FormatError(f"unknown intensity source '{self.kind}'")
        if self.kind == "constant" and not 0.0 <= self.value <= 1.0:
            raise FormatError(f"constant intensity must lie in [0, 1], got {self.value}")
        if self.kind == "file" and self.path is None:
            raise FormatError("file intensity source needs a path")

    @classmethod
    def parse(cls, text: str) -> "IntensitySource":
        """Parse `constant:C`, `luma` or `file:PATH`."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if kind == "luma" and not arg:
            return cls("luma")
        if kind == "constant":
            try:
                value = float(arg)
            except ValueError:
                raise FormatError(f"constant intensity needs a number, got '{arg}'") from None
            return cls("constant", value=value)
        if kind == "file" and arg:
            return cls("file", path=Path(arg))
        raise FormatError(f"invalid intensity source '{text}': use constant:C, luma or file:PATH")

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.value:g}"
        if self.kind == "file":
            return f"file:{self.path}"
        return "luma"


def make_intensity(v: np.ndarray, src: IntensitySource) -> np.ndarray:
    """N×H×W intensity map in [0, 1] for the video v."""
    v = _check_video(v)
    if src.kind == "constant":
        return np.full(v.shape[:3], src.value, dtype=np.float32)
    if src.kind == "luma":
        return np.clip(1.0 - luminance(v), 0.0, 1.0).astype(np.float32)
    imap = read_intensity(src.path)  # type: ignore[arg-type]
    if imap.shape != v.shape[:3]:
        raise ShapeMismatchError(
            f"intensity maps {imap.shape} do not match video frames {v.shape[:3]}"
        )
    return imap


def _check_video(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 4 or v.shape[-1] != 3:
        raise ShapeMismatchError(f"video must be N×H×W×3, got {v.shape}")
    return v


# ── Worker threads ─────────────────────────────────────────────────────────────

def resolve_workers(workers: int | None) -> int:
    """Thread count for the pixel kernels; 0 or None means every core."""
    if workers is None:
        workers = Settings().workers
    if workers < 0:
        raise FormatError(f"workers must be ≥ 0, got {workers}")
    available = numba.config.NUMBA_NUM_THREADS
    if workers == 0:
        return available
    if workers > available:
        logger.warning("Requested %d workers, only %d available; using %d", workers, available, available)
        return available
    return workers


@contextmanager
def worker_threads(workers: int | None) -> Iterator[int]:
    previous = numba.get_num_threads()
    count = resolve_workers(workers)
    numba.set_num_threads(count)
    try:
        yield count
    finally:
        numba.set_num_threads(previous)


# ── Transformation ─────────────────────────────────────────────────────────────

def transform_video(
    lut: IaLut4 | Lut3,
    v: np.ndarray,
    imap: np.ndarray | None,
    workers: int | None = None,
    clamp: bool = True,
) -> np.ndarray:
    """Look up every pixel of v; a 3D table ignores the intensity map."""
    v = _check_video(v)
    if isinstance(lut, IaLut4):
        if imap is None:
            raise FormatError("an IA-LUT needs an intensity map")
        imap = np.asarray(imap)
        if imap.shape != v.shape[:3]:
            raise ShapeMismatchError(
                f"intensity map {imap.shape} does not match video frames {v.shape[:3]}"
            )
    with worker_threads(workers) as count:
        logger.debug("Transforming %d frame(s) of %dx%d on %d worker(s)", v.shape[0], v.shape[2], v.shape[1], count)
        if isinstance(lut, IaLut4):
            out = lut.apply(v, imap, clamp=clamp)
        else:
            out = lut.apply(v, clamp=clamp)
    return np.clip(out, 0.0, 1.0, out=out)


def denoise_hook(v: np.ndarray, plugin: str | None = None) -> np.ndarray:
    """Identity without a plugin; otherwise frames round-trip through it."""
    if not plugin:
        return v
    return run_denoiser(plugin, _check_video(v))


def enhance(
    v: np.ndarray,
    lut: IaLut4 | Lut3,
    src: IntensitySource,
    denoiser: str | None = None,
    workers: int | None = None,
) -> np.ndarray:
    imap = make_intensity(v, src) if isinstance(lut, IaLut4) else None
    out = transform_video(lut, v, imap, workers=workers)
    return denoise_hook(out, denoiser)


# ── Benchmark ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ThroughputReport:
    width: int
    height: int
    frames: int
    workers: int
    seconds_per_frame: float
    fps: float

    @property
    def resolution(self) -> str:
        return f"{self.width}x{self.height}"


def random_ialut(size: int, rng: np.random.Generator) -> IaLut4:
    grid = Grid1D.uniform(size)
    return IaLut4((grid,) * 4, rng.random((size,) * 4 + (3,)))


def bench_transform(
    width: int,
    height: int,
    frames: int,
    workers: int | None = None,
    seed: int = 0,
    repeats: int = 3,
) -> ThroughputReport:
    """Best-of-`repeats` wall clock of transform_video on random data, I/O excluded."""
    if width < 1 or height < 1 or frames < 1:
        raise FormatError(f"benchmark needs a non-empty clip, got {frames}×{width}x{height}")
    if repeats < 1:
        raise FormatError("repeats must be ≥ 1")
    rng = np.random.default_rng(seed)
    lut = random_ialut(BENCH_GRID_SIZE, rng)
    v = rng.random((frames, height, width, 3), dtype=np.float32)
    imap = rng.random((frames, height, width), dtype=np.float32)

    count = resolve_workers(workers)
    # JIT warm-up
    transform_video(lut, v[:1], imap[:1], workers=count)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        transform_video(lut, v, imap, workers=count)
        best = min(best, time.perf_counter() - start)
    best = max(best, 1e-9)

    report = ThroughputReport(
        width=width,
        height=height,
        frames=frames,
        workers=count,
        seconds_per_frame=best / frames,
        fps=frames / best,
    )
    logger.info("Benchmark %s × %d on %d worker(s): %.1f fps", report.resolution, frames, count, report.fps)
    return report
