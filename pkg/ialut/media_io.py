"""
Frame-sequence, intensity-map and LUT serialisation.

Frame directories
-----------------
frame_000000.ppm, frame_000001.ppm, ...   8-bit binary PPM (P6), or
frame_000000.raw, ...                     planar float32 little-endian,
                                          3 planes of H×W per frame,
                                          plus dims.txt holding "W H N"

Intensity directories use the same layout with 8-bit PGM (P5) or
single-plane raw files. 8-bit values map to [0, 1] as v / 255; writing
quantises with round-half-up.

LUT files
---------
Binary: 8-byte magic (IALUT4D1 / IALUT3D1), uint32 L, uint32 flags, then
the grid coordinates axis by axis and the value array, all float32
little-endian. Values are laid out channel fastest, then e, b, g and r
slowest, i.e. C order of values[i, j, k, m, c].

Text: the magic on its own line, L, one line per grid, then one "r g b"
line per grid point in the binary order, printed with 8 decimals.

Basis sidecar: magic IABASIS1, uint32 T, uint32 clip count, T binary LUT
records, then clip count × T float64 little-endian weights.
"""

from __future__ import annotations

import logging
import re
import struct
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ShapeMismatchError
from .fusion import BasisLutSet
from .lut_core import Grid1D, IaLut4, Lut3

logger = logging.getLogger(__name__)

FrameFormat = Literal["ppm", "raw"]
IntensityFormat = Literal["pgm", "raw"]
LutFormat = Literal["binary", "text"]

MAGIC_4D = b"IALUT4D1"
MAGIC_3D = b"IALUT3D1"
MAGIC_BASIS = b"IABASIS1"
DIMS_FILE = "dims.txt"

_FRAME_RE = re.compile(r"^frame_(\d{6})\.(ppm|pgm|raw)$")
_HEADER = struct.Struct("<8sII")
_BASIS_HEADER = struct.Struct("<8sII")


# ── 8-bit quantisation ─────────────────────────────────────────────────────────

def quantize8(v: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-up."""
    return np.floor(np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def dequantize8(q: np.ndarray) -> np.ndarray:
    return (np.asarray(q, dtype=np.float32) / np.float32(255.0)).astype(np.float32)


# ── Directory helpers ──────────────────────────────────────────────────────────

def _scan(directory: Path, allowed: set[str]) -> tuple[str, list[Path]]:
    if not directory.is_dir():
        raise FormatError(f"frame directory not found: {directory}")
    found: dict[int, Path] = {}
    formats: set[str] = set()
    for entry in directory.iterdir():
        match = _FRAME_RE.match(entry.name)
        if not match or match.group(2) not in allowed:
            continue
        found[int(match.group(1))] = entry
        formats.add(match.group(2))
    if not found:
        raise FormatError(f"no frames found in {directory}")
    if len(formats) > 1:
        raise FormatError(f"mixed frame formats {sorted(formats)} in {directory}")
    indices = sorted(found)
    if indices != list(range(len(indices))):
        missing = sorted(set(range(indices[-1] + 1)) - set(indices))
        raise FormatError(f"missing frames in {directory}: indices {missing[:10]}")
    return formats.pop(), [found[i] for i in indices]


def _read_dims(directory: Path) -> tuple[int, int, int]:
    path = directory / DIMS_FILE
    try:
        parts = path.read_text(encoding="ascii").split()
        width, height, count = (int(p) for p in parts[:3])
    except FileNotFoundError:
        raise FormatError(f"raw frames need a {DIMS_FILE} sidecar: {path} not found") from None
    except (ValueError, UnicodeDecodeError):
        raise FormatError(f"malformed dimensions sidecar {path}: expected 'W H N'") from None
    if width < 1 or height < 1 or count < 1:
        raise FormatError(f"invalid dimensions in {path}: {width}x{height}, {count} frame(s)")
    return width, height, count


def _write_dims(directory: Path, width: int, height: int, count: int) -> None:
    (directory / DIMS_FILE).write_text(f"{width} {height} {count}\n", encoding="ascii")


def _read_raw(path: Path, planes: int, height: int, width: int) -> np.ndarray:
    expected = planes * height * width
    data = np.fromfile(path, dtype="<f4")
    if data.size < expected:
        raise FormatError(
            f"truncated frame {path.name}: {data.size} of {expected} float32 values"
        )
    if data.size > expected:
        raise FormatError(f"frame {path.name} is larger than the declared {width}x{height}")
    return data.astype(np.float32).reshape(planes, height, width)


def _open_image(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.format != "PPM" or img.mode != mode:
                raise FormatError(f"{path.name}: expected an 8-bit {mode} PPM/PGM, got {img.format} {img.mode}")
            return np.asarray(img, dtype=np.uint8).copy()
    except UnidentifiedImageError:
        raise FormatError(f"malformed header in {path}") from None
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"truncated frame {path.name}: {exc}") from None


# ── Frames ─────────────────────────────────────────────────────────────────────

def read_frames(directory: str | Path) -> np.ndarray:
    """Read a frame directory into an N×H×W×3 float32 video in [0, 1]."""
    directory = Path(directory)
    fmt, paths = _scan(directory, {"ppm", "raw"})
    if fmt == "raw":
        width, height, count = _read_dims(directory)
        if count != len(paths):
            raise FormatError(f"{DIMS_FILE} declares {count} frame(s), found {len(paths)}")
        frames = [np.moveaxis(_read_raw(p, 3, height, width), 0, -1) for p in paths]
    else:
        frames = []
        for p in paths:
            rgb = _open_image(p, "RGB")
            if frames and rgb.shape != frames[0].shape:
                raise FormatError(
                    f"inconsistent dimensions: {p.name} is {rgb.shape[1]}x{rgb.shape[0]}, "
                    f"expected {frames[0].shape[1]}x{frames[0].shape[0]}"
                )
            frames.append(rgb)
        frames = [dequantize8(f) for f in frames]
    video = np.ascontiguousarray(np.stack(frames), dtype=np.float32)
    logger.info("Read %d %s frame(s) of %dx%d from %s", video.shape[0], fmt, video.shape[2], video.shape[1], directory)
    return video


def write_frames(v: np.ndarray, directory: str | Path, fmt: FrameFormat = "ppm") -> None:
    v = np.asarray(v)
    if v.ndim != 4 or v.shape[-1] != 3:
        raise ShapeMismatchError(f"video must be N×H×W×3, got {v.shape}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count, height, width = v.shape[:3]
    if fmt == "raw":
        _write_dims(directory, width, height, count)
        for n in range(count):
            planar = np.moveaxis(v[n].astype("<f4"), -1, 0)
            np.ascontiguousarray(planar).tofile(directory / f"frame_{n:06d}.raw")
    elif fmt == "ppm":
        for n in range(count):
            Image.fromarray(quantize8(v[n]), mode="RGB").save(directory / f"frame_{n:06d}.ppm", format="PPM")
    else:
        raise FormatError(f"unknown frame format '{fmt}'")
    logger.info("Wrote %d %s frame(s) of %dx%d to %s", count, fmt, width, height, directory)


def write_image(rgb: np.ndarray, path: str | Path) -> None:
    """Single 8-bit PPM image from an H×W×3 array in [0, 1]."""
    Image.fromarray(quantize8(rgb), mode="RGB").save(Path(path), format="PPM")


# ── Intensity maps ─────────────────────────────────────────────────────────────

def read_intensity(directory: str | Path) -> np.ndarray:
    """Read an intensity directory into an N×H×W float32 map in [0, 1]."""
    directory = Path(directory)
    fmt, paths = _scan(directory, {"pgm", "raw"})
    if fmt == "raw":
        width, height, count = _read_dims(directory)
        if count != len(paths):
            raise FormatError(f"{DIMS_FILE} declares {count} map(s), found {len(paths)}")
        maps = [_read_raw(p, 1, height, width)[0] for p in paths]
    else:
        maps = [dequantize8(_open_image(p, "L")) for p in paths]
        if len({m.shape for m in maps}) != 1:
            raise FormatError(f"inconsistent intensity map dimensions in {directory}")
    imap = np.ascontiguousarray(np.stack(maps), dtype=np.float32)
    logger.info("Read %d %s intensity map(s) from %s", imap.shape[0], fmt, directory)
    return imap


def write_intensity(imap: np.ndarray, directory: str | Path, fmt: IntensityFormat = "pgm") -> None:
    imap = np.asarray(imap)
    if imap.ndim != 3:
        raise ShapeMismatchError(f"intensity map must be N×H×W, got {imap.shape}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count, height, width = imap.shape
    if fmt == "raw":
        _write_dims(directory, width, height, count)
        for n in range(count):
            np.ascontiguousarray(imap[n].astype("<f4")).tofile(directory / f"frame_{n:06d}.raw")
    elif fmt == "pgm":
        for n in range(count):
            Image.fromarray(quantize8(imap[n]), mode="L").save(directory / f"frame_{n:06d}.pgm", format="PPM")
    else:
        raise FormatError(f"unknown intensity format '{fmt}'")


# ── LUTs ───────────────────────────────────────────────────────────────────────

def _export_values(lut: IaLut4 | Lut3, clamp: bool) -> np.ndarray:
    values = lut.values
    if not np.all(np.isfinite(values)):
        raise FormatError("refusing to write a LUT with non-finite values")
    if clamp:
        outside = int(np.count_nonzero((values < 0.0) | (values > 1.0)))
        if outside:
            logger.warning("Clamping %d LUT value(s) outside [0, 1] on write", outside)
        values = np.clip(values, 0.0, 1.0)
    return values


def _lut_bytes(lut: IaLut4 | Lut3, clamp: bool = True) -> bytes:
    magic = MAGIC_4D if isinstance(lut, IaLut4) else MAGIC_3D
    grids = np.concatenate([g.points for g in lut.grids]).astype("<f4")
    values = _export_values(lut, clamp).astype("<f4")
    return _HEADER.pack(magic, lut.size, 0) + grids.tobytes() + values.tobytes()


def _lut_from_bytes(data: bytes, offset: int = 0, source: str = "<bytes>") -> tuple[IaLut4 | Lut3, int]:
    if len(data) - offset < _HEADER.size:
        raise FormatError(f"{source}: length mismatch, LUT header truncated")
    magic, size, _flags = _HEADER.unpack_from(data, offset)
    if magic == MAGIC_4D:
        axes = 4
    elif magic == MAGIC_3D:
        axes = 3
    else:
        raise FormatError(f"{source}: magic mismatch, got {magic!r}")
    if size < 2:
        raise FormatError(f"{source}: grid size must be ≥ 2, got {size}")
    n_grid = axes * size
    n_values = 3 * size**axes
    start = offset + _HEADER.size
    end = start + 4 * (n_grid + n_values)
    if len(data) < end:
        raise FormatError(
            f"{source}: length mismatch, expected {n_values} values at L={size}"
        )
    payload = np.frombuffer(data, dtype="<f4", count=n_grid + n_values, offset=start)
    grids = tuple(Grid1D(payload[a * size:(a + 1) * size]) for a in range(axes))
    values = payload[n_grid:].astype(np.float64).reshape((size,) * axes + (3,))
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{source}: LUT contains non-finite values")
    lut: IaLut4 | Lut3 = IaLut4(grids, values) if axes == 4 else Lut3(grids, values)  # type: ignore[arg-type]
    return lut, end


def _lut_text(lut: IaLut4 | Lut3) -> str:
    magic = MAGIC_4D if isinstance(lut, IaLut4) else MAGIC_3D
    lines = [magic.decode("ascii"), str(lut.size)]
    lines.extend(" ".join(f"{p:.8f}" for p in g.points) for g in lut.grids)
    flat = _export_values(lut, clamp=True).reshape(-1, 3)
    lines.extend(f"{r:.8f} {g:.8f} {b:.8f}" for r, g, b in flat)
    return "\n".join(lines) + "\n"


def _lut_from_text(text: str, source: str) -> IaLut4 | Lut3:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].encode("ascii", "replace") not in (MAGIC_4D, MAGIC_3D):
        raise FormatError(f"{source}: magic mismatch")
    axes = 4 if lines[0] == MAGIC_4D.decode() else 3
    try:
        size = int(lines[1])
        grids_raw = [np.array(lines[2 + a].split(), dtype=np.float64) for a in range(axes)]
        rows = np.array([ln.split() for ln in lines[2 + axes:]], dtype=np.float64)
    except (IndexError, ValueError):
        raise FormatError(f"{source}: malformed text LUT") from None
    if size < 2:
        raise FormatError(f"{source}: grid size must be ≥ 2, got {size}")
    if any(g.shape != (size,) for g in grids_raw):
        raise FormatError(f"{source}: length mismatch in grid lines for L={size}")
    if rows.ndim != 2 or rows.shape != (size**axes, 3):
        raise FormatError(
            f"{source}: length mismatch, expected {size**axes} value lines, got {len(lines) - 2 - axes}"
        )
    grids = tuple(Grid1D(g) for g in grids_raw)
    values = rows.reshape((size,) * axes + (3,))
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{source}: LUT contains non-finite values")
    return IaLut4(grids, values) if axes == 4 else Lut3(grids, values)  # type: ignore[arg-type]


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from None


def write_lut(lut: IaLut4 | Lut3, path: str | Path, fmt: LutFormat = "binary") -> None:
    """Write a LUT; values are clamped to [0, 1] on the way out."""
    path = Path(path)
    if fmt == "binary":
        path.write_bytes(_lut_bytes(lut))
    elif fmt == "text":
        path.write_text(_lut_text(lut), encoding="ascii")
    else:
        raise FormatError(f"unknown LUT format '{fmt}'")
    logger.info("Wrote %s LUT (L=%d, %s) to %s", "IA-LUT" if isinstance(lut, IaLut4) else "3D", lut.size, fmt, path)


def _is_text(data: bytes) -> bool:
    # the text header ends its magic line with a newline and continues with
    # ASCII digits; a binary L=10 also puts 0x0A at byte 8 but 0x00 after it
    return len(data) > 9 and data[8:9] in (b"\n", b"\r") and data[9:10] != b"\x00"


def read_lut(path: str | Path) -> IaLut4 | Lut3:
    """Read a binary or text LUT file, detected from its header."""
    path = Path(path)
    data = _read_bytes(path)
    if _is_text(data):
        try:
            lut = _lut_from_text(data.decode("ascii"), str(path))
        except UnicodeDecodeError:
            raise FormatError(f"{path}: malformed text LUT") from None
    else:
        lut, end = _lut_from_bytes(data, source=str(path))
        if end != len(data):
            raise FormatError(f"{path}: length mismatch, {len(data) - end} trailing byte(s)")
    logger.debug("Read LUT L=%d from %s", lut.size, path)
    return lut


# ── Basis sidecar ──────────────────────────────────────────────────────────────

def write_basis(basis: BasisLutSet, weights: np.ndarray, path: str | Path) -> None:
    """Basis tables (unclamped) plus every clip's fusion weights."""
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if weights.shape[1] != basis.count:
        raise ShapeMismatchError(
            f"weights carry {weights.shape[1]} entries per clip, basis has {basis.count} tables"
        )
    chunks = [_BASIS_HEADER.pack(MAGIC_BASIS, basis.count, weights.shape[0])]
    chunks.extend(_lut_bytes(basis.table(t), clamp=False) for t in range(basis.count))
    chunks.append(weights.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))
    logger.info("Wrote %d basis table(s) and %d weight vector(s) to %s", basis.count, weights.shape[0], path)


def read_basis(path: str | Path) -> tuple[BasisLutSet, np.ndarray]:
    path = Path(path)
    data = _read_bytes(path)
    if len(data) < _BASIS_HEADER.size:
        raise FormatError(f"{path}: length mismatch, basis header truncated")
    magic, count, clips = _BASIS_HEADER.unpack_from(data, 0)
    if magic != MAGIC_BASIS:
        raise FormatError(f"{path}: magic mismatch, got {magic!r}")
    offset = _BASIS_HEADER.size
    tables = []
    for _ in range(count):
        lut, offset = _lut_from_bytes(data, offset, source=str(path))
        tables.append(lut)
    if not tables:
        raise FormatError(f"{path}: basis holds no tables")
    if any(t.grids != tables[0].grids or type(t) is not type(tables[0]) for t in tables):
        raise FormatError(f"{path}: basis tables do not share one grid")
    expected = offset + 8 * clips * count
    if len(data) != expected:
        raise FormatError(f"{path}: length mismatch in the weight record")
    weights = np.frombuffer(data, dtype="<f8", count=clips * count, offset=offset).reshape(clips, count).copy()
    basis = BasisLutSet(tables[0].grids, np.stack([t.values for t in tables]))
    return basis, weights
