"""
Subcommand handlers for `ialut ...`.

Each handler takes the parsed argparse namespace, does its work and renders
its result on the shared rich console. Errors propagate as IaLutError
subclasses; cli.main turns them into exit codes.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np
from rich.table import Table

from .errors import FormatError
from .fusion import export
from .logger_setup import console
from .losses import LossWeights
from .lut_core import IaLut4, Lut3
from .media_io import (
    read_frames,
    read_intensity,
    read_lut,
    write_basis,
    write_frames,
    write_image,
    write_lut,
)
from .metrics import MetricReport, evaluate
from .optimize import FitConfig, FitReport, fit
from .pipeline import IntensitySource, ThroughputReport, bench_transform, enhance

logger = logging.getLogger(__name__)

_TEXT_SUFFIXES = {".txt", ".lut"}


def lut_format_for(path: Path, forced: str | None = None) -> str:
    if forced:
        return forced
    return "text" if path.suffix.lower() in _TEXT_SUFFIXES else "binary"


# ── apply ─────────────────────────────────────────────────────────────


def handle_apply(args: argparse.Namespace) -> None:
    lut = read_lut(args.lut)
    src = IntensitySource.parse(args.intensity)
    v = read_frames(args.frames)
    if isinstance(lut, Lut3) and src.kind != "luma":
        logger.warning("[yellow]3D LUT[/] ignores the intensity source %s", src.describe())
    out = enhance(v, lut, src, denoiser=args.denoise, workers=args.workers)
    write_frames(out, args.out, fmt=args.out_format)
    console.print(
        f"[green]✓[/] Enhanced {out.shape[0]} frame(s) of {out.shape[2]}x{out.shape[1]} "
        f"→ [bold]{args.out}[/]"
    )


# ── fit ───────────────────────────────────────────────────────────────


def _fit_config(args: argparse.Namespace) -> tuple[FitConfig, Path | None]:
    """Build the FitConfig; also returns the intensity directory for file:PATH."""
    intensity_path: Path | None = None
    intensity_value = 0.5
    if args.intensity == "free":
        mode = "free"
    else:
        src = IntensitySource.parse(args.intensity)
        if src.kind == "constant":
            mode, intensity_value = "constant", src.value
        elif src.kind == "file":
            mode, intensity_path = "provided", src.path
        else:
            mode = "luma"
    cfg = FitConfig(
        grid_size=args.grid,
        basis_count=args.basis,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        min_lr=args.min_lr,
        loss_weights=LossWeights(alpha_s=args.alpha_s, alpha_m=args.alpha_m),
        intensity=mode,
        intensity_value=intensity_value,
        fit_3d=args.fit_3d,
        recon_loss=args.loss,
        restarts=args.restarts,
        crop=args.crop,
        holdout_frames=args.holdout,
        seed=args.seed,
        log_every=args.log_every,
        keep_best=not args.keep_last,
    )
    return cfg, intensity_path


def handle_fit(args: argparse.Namespace) -> None:
    cfg, intensity_path = _fit_config(args)
    if len(args.low) != len(args.gt):
        raise FormatError(f"got {len(args.low)} --low but {len(args.gt)} --gt directories")
    if intensity_path is not None and len(args.low) != 1:
        raise FormatError("file intensity maps are supported for a single clip only")

    pairs = []
    for low_dir, gt_dir in zip(args.low, args.gt):
        imap = read_intensity(intensity_path) if intensity_path is not None else None
        pairs.append((read_frames(low_dir), read_frames(gt_dir), imap))

    result = fit(pairs, cfg)
    out = Path(args.out)
    write_lut(export(result.basis, result.weights[0]), out, lut_format_for(out))
    sidecar = out.with_name(out.name + ".basis")
    write_basis(result.basis, result.weights, sidecar)
    if len(pairs) > 1:
        logger.info("Wrote the fused LUT of clip 0; all %d weight vectors are in %s", len(pairs), sidecar)
    if args.report:
        Path(args.report).write_text(result.report.to_text(), encoding="utf-8")
    _print_fit_report(result.report, out, sidecar)


def _print_fit_report(report: FitReport, out: Path, sidecar: Path) -> None:
    t = Table(title="Fit Report", show_header=True, header_style="bold cyan")
    t.add_column("Item", style="cyan")
    t.add_column("Value", justify="right")
    final = report.final
    t.add_row("Epochs", str(len(report.epochs)))
    t.add_row("Steps", str(report.steps))
    t.add_row("Best epoch", str(report.best_epoch))
    if final is not None:
        t.add_row("Final loss", f"{final.total:.6g}")
        t.add_row("Final recon", f"{final.recon:.6g}")
    t.add_row("PSNR (dB)", f"{report.final_psnr:.3f}")
    t.add_row("MSE", f"{report.final_mse:.6g}")
    t.add_row("Wall clock (s)", f"{report.wall_clock:.2f}")
    console.print(t)
    console.print(f"[green]✓[/] LUT → [bold]{out}[/]   basis → [dim]{sidecar}[/]")


# ── metrics ───────────────────────────────────────────────────────────


def handle_metrics(args: argparse.Namespace) -> None:
    report = evaluate(read_frames(args.pred), read_frames(args.gt))
    if args.format == "kv":
        for line in report.as_kv():
            console.print(line, markup=False, highlight=False, soft_wrap=True)
        return
    _print_metrics(report)


def _print_metrics(report: MetricReport) -> None:
    t = Table(title="Enhancement Metrics", show_header=True, header_style="bold cyan")
    t.add_column("Metric", style="cyan")
    t.add_column("Value", justify="right")
    t.add_row("PSNR (dB)", f"{report.psnr:.4f}")
    t.add_row("SSIM", f"{report.ssim:.4f}")
    t.add_row("AB(Var) ×10³", f"{report.ab_var:.4f}")
    t.add_row("MABD ×10³", f"{report.mabd:.4f}")
    console.print(t)

    if report.md_ab_pred:
        pairs = Table(title="MD-AB per frame pair", show_header=True, header_style="bold cyan")
        pairs.add_column("Pair", style="dim")
        pairs.add_column("Prediction", justify="right")
        pairs.add_column("Ground truth", justify="right")
        for n, (p, g) in enumerate(zip(report.md_ab_pred, report.md_ab_gt)):
            pairs.add_row(f"{n}→{n + 1}", f"{p:.6f}", f"{g:.6f}")
        console.print(pairs)


# ── slice ─────────────────────────────────────────────────────────────


def slice_image(lut: IaLut4, e: float) -> np.ndarray:
    """The e-slice flattened to an L × L² image.

    Pixel (j, k·L + i) shows the output for grid colour (r_i, g_j, b_k): one
    L×L tile per blue level, laid left to right.
    """
    values = lut.slice_at(e).values
    size = values.shape[0]
    return np.clip(values.transpose(1, 2, 0, 3).reshape(size, size * size, 3), 0.0, 1.0)


def handle_slice(args: argparse.Namespace) -> None:
    if not 0.0 <= args.e <= 1.0:
        raise FormatError(f"--e must lie in [0, 1], got {args.e}")
    lut = read_lut(args.lut)
    if not isinstance(lut, IaLut4):
        raise FormatError(f"{args.lut} holds a 3D LUT; slicing needs an IA-LUT")
    write_image(slice_image(lut, args.e), args.out)
    console.print(f"[green]✓[/] Slice at e={args.e:g} → [bold]{args.out}[/]")


# ── bench ─────────────────────────────────────────────────────────────


def parse_size(text: str) -> tuple[int, int]:
    try:
        width, height = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise FormatError(f"--size must look like WxH, got '{text}'") from None
    if width < 1 or height < 1:
        raise FormatError(f"--size must be positive, got '{text}'")
    return width, height


def handle_bench(args: argparse.Namespace) -> None:
    width, height = parse_size(args.size)
    report = bench_transform(width, height, args.frames, workers=args.workers, seed=args.seed, repeats=args.repeats)
    _print_throughput(report)


def _print_throughput(report: ThroughputReport) -> None:
    t = Table(title="Throughput", show_header=True, header_style="bold cyan")
    t.add_column("Resolution", style="cyan")
    t.add_column("Frames", justify="right")
    t.add_column("Workers", justify="right")
    t.add_column("ms / frame", justify="right")
    t.add_column("fps", justify="right", style="bold green")
    t.add_row(
        report.resolution,
        str(report.frames),
        str(report.workers),
        f"{report.seconds_per_frame * 1e3:.2f}",
        f"{report.fps:.1f}",
    )
    console.print(t)


# ── lutconv ───────────────────────────────────────────────────────────


def handle_lutconv(args: argparse.Namespace) -> None:
    src, dst = Path(args.input), Path(args.out)
    lut = read_lut(src)
    fmt = lut_format_for(dst, args.to)
    write_lut(lut, dst, fmt)
    console.print(f"[green]✓[/] {src} → [bold]{dst}[/] ({fmt}, L={lut.size})")
