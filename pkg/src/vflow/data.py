"""Synthetic 2-D checkerboard data and its quantized variant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng


@dataclass(frozen=True)
class CheckerboardSpec:
    """Uniform density on the black squares of a 4x4 board over
    [-2*scale, 2*scale]^2 (total area 8*scale^2)."""

    scale: float = 2.0
    n_train: int = 50_000
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("sample counts must be at least 1")

    @property
    def true_log_density(self) -> float:
        return -math.log(8.0 * self.scale**2)


@dataclass(frozen=True)
class QuantizedSpec:
    levels: int = 8
    base: CheckerboardSpec = CheckerboardSpec()

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 quantization levels")


def sample_checkerboard(n: int, rng: Rng, scale: float = 2.0) -> np.ndarray:
    x1 = rng.uniform(n, -2.0, 2.0)
    k = rng.integers(0, 2, n)
    x2 = rng.uniform(n) - 2.0 * k + np.mod(np.floor(x1), 2.0)
    return scale * np.stack([x1, x2], axis=1)


def in_black_cells(x: np.ndarray, scale: float = 2.0) -> np.ndarray:
    """True where a point lies on the support (even cell parity, inside the board)."""
    u = np.asarray(x) / scale
    inside = np.all((u >= -2.0) & (u <= 2.0), axis=1)
    parity = (np.floor(u[:, 0]) + np.floor(u[:, 1])) % 2 == 0
    return inside & parity


def quantize(x: np.ndarray, spec: QuantizedSpec = QuantizedSpec()) -> np.ndarray:
    """Uniform per-dimension binning of [-2*scale, 2*scale] into ``levels`` bins."""
    half = 2.0 * spec.base.scale
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > half) or not np.all(np.isfinite(x)):
        raise ValueError(f"inputs must lie in [{-half}, {half}]")
    bins = np.floor((x + half) / (2.0 * half) * spec.levels).astype(np.int64)
    return np.minimum(bins, spec.levels - 1)


def make_splits(spec: CheckerboardSpec = CheckerboardSpec(), rng: Rng | None = None):
    """Independently drawn train and test sets."""
    rng = rng if rng is not None else Rng(spec.seed)
    train = sample_checkerboard(spec.n_train, rng, spec.scale)
    test = sample_checkerboard(spec.n_test, rng, spec.scale)
    return train, test


def make_quantized_splits(spec: QuantizedSpec = QuantizedSpec(), rng: Rng | None = None):
    train, test = make_splits(spec.base, rng)
    return quantize(train, spec), quantize(test, spec)
