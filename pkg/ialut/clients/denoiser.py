"""
Runs an external denoiser over a video through standard input/output.

Protocol, both directions:
    one ASCII line "W H N\\n"
    N frames of planar float32 little-endian (3 planes of H×W each)

The command is split with shell-like rules but is not run through a shell.
"""

from __future__ import annotations

import logging
import shlex
import subprocess

import numpy as np

from ..errors import DenoiserError

logger = logging.getLogger(__name__)


def encode_video(v: np.ndarray) -> bytes:
    count, height, width = v.shape[:3]
    planar = np.ascontiguousarray(np.moveaxis(v.astype("<f4"), -1, 1))
    return f"{width} {height} {count}\n".encode("ascii") + planar.tobytes()


def decode_video(payload: bytes) -> np.ndarray:
    header, sep, body = payload.partition(b"\n")
    if not sep:
        raise DenoiserError("denoiser output has no dimensions line")
    try:
        width, height, count = (int(p) for p in header.split()[:3])
    except ValueError:
        raise DenoiserError(f"denoiser output has a malformed dimensions line: {header[:40]!r}") from None
    expected = 4 * 3 * width * height * count
    if len(body) != expected:
        raise DenoiserError(
            f"denoiser output carries {len(body)} bytes, expected {expected} for {count}×{width}x{height}"
        )
    planar = np.frombuffer(body, dtype="<f4").reshape(count, 3, height, width)
    return np.ascontiguousarray(np.moveaxis(planar, 1, -1), dtype=np.float32)


def run_denoiser(command: str, v: np.ndarray, timeout: float | None = None) -> np.ndarray:
    """Pipe `v` through `command` and return the frames it writes back.

    Raises DenoiserError on a non-zero exit, a malformed stream or frames
    whose shape differs from the input.
    """
    argv = shlex.split(command)
    if not argv:
        raise DenoiserError("empty denoiser command")

    logger.info("Running denoiser [bold]%s[/] on %d frame(s)", argv[0], v.shape[0])
    try:
        proc = subprocess.run(argv, input=encode_video(v), capture_output=True, timeout=timeout, check=False)
    except FileNotFoundError:
        raise DenoiserError(f"denoiser command not found: {argv[0]}") from None
    except subprocess.TimeoutExpired:
        raise DenoiserError(f"denoiser timed out after {timeout}s") from None

    if proc.returncode != 0:
        stderr = proc.stderr.decode("utf-8", "replace").strip()
        raise DenoiserError(
            f"denoiser exited with status {proc.returncode}" + (f": {stderr[-400:]}" if stderr else ""),
            returncode=proc.returncode,
        )

    out = decode_video(proc.stdout)
    if out.shape != v.shape:
        raise DenoiserError(f"denoiser shape mismatch: sent {v.shape}, received {out.shape}")
    if not np.all(np.isfinite(out)):
        raise DenoiserError("denoiser returned non-finite values")
    return out
