"""
ialut: intensity-aware 4D LUT video enhancement
=================================================
Usage:
    ialut apply   --lut PATH --frames DIR --out DIR [--intensity constant:C|luma|file:PATH]
                  [--denoise CMD] [--workers N]
    ialut fit     --low DIR --gt DIR --out LUTPATH [--grid L] [--basis T] [--epochs E]
                  [--lr R] [--alpha-s S] [--alpha-m M] [--batch B] [--fit-3d] ...
    ialut metrics --pred DIR --gt DIR [--format table|kv]
    ialut slice   --lut PATH --e VALUE --out PATH
    ialut bench   [--size WxH] [--frames N] [--workers K]
    ialut lutconv --in PATH --out PATH [--to text|binary]

Every subcommand also takes --debug and --seed.

Exit codes: 0 success, 2 input/format error, 3 shape mismatch,
4 numerical failure, 5 denoiser failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .config import Settings
from .errors import IaLutError
from .logger_setup import setup_logging

logger = logging.getLogger("ialut")


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--debug", action="store_true", default=settings.debug, help="Verbose logging")
    common.add_argument("--seed", type=int, default=0, help="Seed for every random choice (default: 0)")

    parser = argparse.ArgumentParser(
        prog="ialut",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    # ── apply ──────────────────────────────────────────────────────────
    apply_p = sub.add_parser("apply", parents=[common], help="Enhance a frame directory with a LUT")
    apply_p.add_argument("--lut", required=True, metavar="PATH", help="LUT file (binary or text)")
    apply_p.add_argument("--frames", required=True, metavar="DIR", help="Input frame directory")
    apply_p.add_argument("--out", required=True, metavar="DIR", help="Output frame directory")
    apply_p.add_argument(
        "--intensity", default="luma", metavar="SRC",
        help="constant:C, luma or file:PATH (default: luma)",
    )
    apply_p.add_argument("--denoise", metavar="CMD", help="External denoiser command")
    apply_p.add_argument("--workers", type=int, default=settings.workers, help="Worker threads (0 = all cores)")
    apply_p.add_argument("--out-format", choices=["ppm", "raw"], default="ppm", help="Output frame format")

    # ── fit ────────────────────────────────────────────────────────────
    fit_p = sub.add_parser("fit", parents=[common], help="Fit basis LUTs to paired clips")
    fit_p.add_argument("--low", required=True, action="append", metavar="DIR", help="Low-light clip (repeatable)")
    fit_p.add_argument("--gt", required=True, action="append", metavar="DIR", help="Ground-truth clip (repeatable)")
    fit_p.add_argument("--out", required=True, metavar="LUTPATH", help="Fused LUT output (.txt/.lut = text)")
    fit_p.add_argument(
        "--intensity", default="luma", metavar="SRC",
        help="constant:C, luma, file:PATH or free (default: luma)",
    )
    fit_p.add_argument("--grid", type=int, default=33, help="Grid points per axis L (default: 33)")
    fit_p.add_argument("--basis", type=int, default=3, help="Basis tables T (default: 3)")
    fit_p.add_argument("--epochs", type=int, default=100)
    fit_p.add_argument("--lr", type=float, default=4e-4)
    fit_p.add_argument("--min-lr", type=float, default=1e-7, help="Cosine floor (default: 1e-7)")
    fit_p.add_argument("--alpha-s", type=float, default=1e-4, help="Smoothness weight (default: 1e-4)")
    fit_p.add_argument("--alpha-m", type=float, default=10.0, help="Monotonicity weight (default: 10)")
    fit_p.add_argument("--batch", type=int, default=8)
    fit_p.add_argument("--fit-3d", action="store_true", help="Fit a plain 3D LUT instead of an IA-LUT")
    fit_p.add_argument("--loss", choices=["charbonnier", "l2"], default="charbonnier")
    fit_p.add_argument("--restarts", type=int, default=0, help="Cosine warm restarts")
    fit_p.add_argument("--crop", type=int, help="Random square crop size per frame")
    fit_p.add_argument("--holdout", type=int, default=0, help="Trailing frames per clip kept out of training")
    fit_p.add_argument("--log-every", type=int, default=settings.log_every, help="Epochs between progress lines")
    fit_p.add_argument("--report", metavar="PATH", help="Write the per-epoch report here")
    fit_p.add_argument(
        "--keep-last", action="store_true",
        help="Return the last epoch's tables instead of the lowest-objective ones",
    )

    # ── metrics ────────────────────────────────────────────────────────
    metrics_p = sub.add_parser("metrics", parents=[common], help="Quality and consistency metrics")
    metrics_p.add_argument("--pred", required=True, metavar="DIR")
    metrics_p.add_argument("--gt", required=True, metavar="DIR")
    metrics_p.add_argument("--format", choices=["table", "kv"], default="table")

    # ── slice ──────────────────────────────────────────────────────────
    slice_p = sub.add_parser("slice", parents=[common], help="Export the 3D slice of an IA-LUT at fixed e")
    slice_p.add_argument("--lut", required=True, metavar="PATH")
    slice_p.add_argument("--e", required=True, type=float, metavar="VALUE")
    slice_p.add_argument("--out", required=True, metavar="PATH", help="PPM image")

    # ── bench ──────────────────────────────────────────────────────────
    bench_p = sub.add_parser("bench", parents=[common], help="Measure transform throughput")
    bench_p.add_argument("--size", default="1920x1080", metavar="WxH")
    bench_p.add_argument("--frames", type=int, default=10)
    bench_p.add_argument("--workers", type=int, default=settings.workers, help="Worker threads (0 = all cores)")
    bench_p.add_argument("--repeats", type=int, default=3)

    # ── lutconv ────────────────────────────────────────────────────────
    conv_p = sub.add_parser("lutconv", parents=[common], help="Convert a LUT between text and binary")
    conv_p.add_argument("--in", dest="input", required=True, metavar="PATH")
    conv_p.add_argument("--out", required=True, metavar="PATH")
    conv_p.add_argument("--to", choices=["text", "binary"], help="Force the output format")

    return parser


def main(argv: Sequence[str] | None = None) -> None:
    try:
        settings = Settings()
    except IaLutError as exc:
        setup_logging()
        logger.error("[red]✗[/] %s", exc)
        sys.exit(exc.exit_code)

    args = build_parser(settings).parse_args(argv)
    setup_logging(debug=args.debug)

    from . import commands

    handlers = {
        "apply": commands.handle_apply,
        "fit": commands.handle_fit,
        "metrics": commands.handle_metrics,
        "slice": commands.handle_slice,
        "bench": commands.handle_bench,
        "lutconv": commands.handle_lutconv,
    }
    try:
        handlers[args.command](args)
    except IaLutError as exc:
        logger.error("[red]✗[/] %s", exc)
        if args.debug:
            logger.exception("Traceback")
        sys.exit(exc.exit_code)
    except KeyboardInterrupt:
        logger.warning("Interrupted.")
        sys.exit(130)
