from __future__ import annotations

from typing import Callable

import numpy as np
import pytest

from ialut.lut_core import Grid1D, IaLut4, Lut3

_ENV_KEYS = ("IALUT_WORKERS", "IALUT_DEBUG", "IALUT_LOG_EVERY")


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """No IALUT_* variables and no stray .env file leak into a test."""
    for key in _ENV_KEYS:
        monkeypatch.delenv(key, raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def _random_grid(rng: np.random.Generator, size: int) -> Grid1D:
    while True:
        inner = np.sort(rng.uniform(0.05, 0.95, size - 2))
        if size <= 3 or np.min(np.diff(inner)) > 1e-3:
            return Grid1D(np.concatenate([[0.0], inner, [1.0]]))


@pytest.fixture
def random_grid(rng) -> Callable[[int], Grid1D]:
    return lambda size: _random_grid(rng, size)


@pytest.fixture
def random_lut(rng) -> Callable[..., IaLut4]:
    """Factory for IA-LUTs with non-uniform grids and values in [low, high]."""

    def make(size: int = 5, low: float = 0.0, high: float = 1.0, uniform: bool = False) -> IaLut4:
        grids = tuple(
            Grid1D.uniform(size) if uniform else _random_grid(rng, size) for _ in range(4)
        )
        return IaLut4(grids, rng.uniform(low, high, (size,) * 4 + (3,)))

    return make


@pytest.fixture
def random_lut3(rng) -> Callable[..., Lut3]:
    def make(size: int = 5, low: float = 0.0, high: float = 1.0) -> Lut3:
        grids = tuple(_random_grid(rng, size) for _ in range(3))
        return Lut3(grids, rng.uniform(low, high, (size,) * 3 + (3,)))

    return make
