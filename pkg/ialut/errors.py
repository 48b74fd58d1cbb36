"""
Exception hierarchy for the LUT engine.

Every error carries the process exit code the CLI reports for it:
    2  input / format problems
    3  shape mismatches
    4  numerical failures (non-finite gradients, divergence)
    5  external denoiser failures
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .optimize import FitReport


class IaLutError(Exception):
    """Base class for every error raised by ialut."""

    exit_code: int = 1


class FormatError(IaLutError, ValueError):
    """Malformed, missing or invalid input (files, flags, configuration)."""

    exit_code = 2


class CorruptFrameError(FormatError):
    """Non-finite pixel or intensity data reached the lookup."""


class ShapeMismatchError(IaLutError, ValueError):
    """Arrays that must agree in shape or count do not."""

    exit_code = 3


class NumericalError(IaLutError, ArithmeticError):
    """A gradient or loss became non-finite."""

    exit_code = 4


class DivergenceError(NumericalError):
    """The fit loss blew past the divergence threshold."""

    def __init__(self, message: str, report: "FitReport | None" = None) -> None:
        super().__init__(message)
        self.report = report


class DenoiserError(IaLutError, RuntimeError):
    """The external denoiser failed or returned frames of the wrong shape."""

    exit_code = 5

    def __init__(self, message: str, returncode: int | None = None) -> None:
        super().__init__(message)
        self.returncode = returncode
