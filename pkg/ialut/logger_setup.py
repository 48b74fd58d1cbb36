"""
Rich logging setup for the LUT engine.

`console` (stdout) renders results: tables and `key=value` lines.
Log records go to a second console on stderr so that results can be piped
without log noise. Import both from here so every module shares them.
"""

from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console(highlight=True)
log_console = Console(stderr=True, highlight=True)

_KEYWORDS = ["LUT", "IA-LUT", "basis", "epoch", "PSNR", "SSIM", "MABD", "fps"]

# numba's compiler logs every pass at DEBUG
_NOISY = ("numba",)


def setup_logging(debug: bool = False) -> None:
    """Install the rich handler on the root logger.

    A repeated call replaces the handler from the previous one. Handlers
    installed by anything else (pytest's capture, an embedding application)
    are left in place.
    """
    root = logging.getLogger()
    for old in [h for h in root.handlers if isinstance(h, RichHandler)]:
        root.removeHandler(old)
    handler = RichHandler(
        console=log_console,
        rich_tracebacks=True,
        tracebacks_show_locals=debug,
        show_path=debug,
        markup=True,
        keywords=_KEYWORDS,
    )
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%H:%M:%S]"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if debug else logging.INFO)
    for name in _NOISY:
        logging.getLogger(name).setLevel(logging.WARNING)
