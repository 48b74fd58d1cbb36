"""
Runtime defaults read from IALUT_* environment variables.

A `.env` file in the current working directory is merged underneath the
process environment, so a project can pin its defaults without exporting
anything. Command-line flags always win over these values.

Keys:
    IALUT_WORKERS     worker threads for the pixel kernels (0 = all cores)
    IALUT_DEBUG       1/true/yes enables DEBUG logging
    IALUT_LOG_EVERY   fit progress is logged every N epochs
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import dotenv_values

from .errors import FormatError

_TRUE = {"1", "true", "yes", "on"}


def _environ() -> dict[str, str]:
    env_file = Path.cwd() / ".env"
    merged: dict[str, str] = {}
    if env_file.exists():
        merged.update({k: v for k, v in dotenv_values(str(env_file)).items() if v is not None})
    merged.update(os.environ)
    return merged


def _optional(key: str, default: str = "") -> str:
    return (_environ().get(key) or default).strip()


def _int(key: str, default: int, minimum: int = 0) -> int:
    raw = _optional(key, str(default))
    try:
        value = int(raw)
    except ValueError:
        raise FormatError(f"Config key '{key}' must be an integer, got '{raw}'") from None
    if value < minimum:
        raise FormatError(f"Config key '{key}' must be >= {minimum}, got {value}")
    return value


@dataclass(frozen=True)
class Settings:
    workers: int = field(default_factory=lambda: _int("IALUT_WORKERS", 0))
    debug: bool = field(
        default_factory=lambda: _optional("IALUT_DEBUG", "0").lower() in _TRUE
    )
    log_every: int = field(default_factory=lambda: _int("IALUT_LOG_EVERY", 10, minimum=1))
