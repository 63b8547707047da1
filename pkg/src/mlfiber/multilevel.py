"""Smoothed multilevel density estimation of a scalar statistic over a fiber.

The estimate on a grid ``s_1..s_k`` is the kernel density of the coarsest
level's values plus, for every finer level, the mean difference between the
kernel vectors of its values ``Y`` and of the coupled coarse draws ``Z``.
A discrete Gaussian filter is applied afterwards.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DesignMatrix, chi_square_statistic, fit_expected_table, in_fiber
from .moves import MoveBasis
from .samplers import ChainConfig, LevelSampleSet, LevelSchedule, run_level_samples

_CHUNK = 4096


@dataclass(frozen=True)
class Grid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 2:
            raise ValueError("a grid needs at least 2 points")
        steps = np.diff(pts)
        if np.any(steps <= 0):
            raise ValueError("grid points must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValueError("grid spacing must be uniform")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lo: float, hi: float, k: int) -> "Grid":
        return cls(np.linspace(lo, hi, k))

    @property
    def k(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> float:
        return (self.points[-1] - self.points[0]) / (self.k - 1)


@dataclass(frozen=True)
class SmoothingKernel:
    """Epanechnikov kernel ``0.75 (1 - u^2)`` on ``[-1, 1]`` scaled by the bandwidth."""

    bandwidth: float = 1.0
    kind: str = "epanechnikov"

    def __post_init__(self):
        if self.kind != "epanechnikov":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def kernel_vector(t: float, grid: Grid, kern: SmoothingKernel) -> np.ndarray:
    """``(1/delta) g((t - s_j)/delta)`` for every grid point."""
    d = kern.bandwidth
    return kern((t - grid.points) / d) / d


def kernel_sum(values: Sequence[float], grid: Grid, kern: SmoothingKernel) -> np.ndarray:
    """Sum of :func:`kernel_vector` over ``values``, accumulated in fixed-size chunks."""
    values = np.asarray(values, dtype=float)
    d = kern.bandwidth
    total = np.zeros(grid.k)
    for start in range(0, len(values), _CHUNK):
        t = values[start:start + _CHUNK, None]
        total += (kern((t - grid.points[None, :]) / d) / d).sum(axis=0)
    return total


def kde(values: Sequence[float], grid: Grid, kern: SmoothingKernel) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise ValueError("empty sample")
    return kernel_sum(values, grid, kern) / len(values)


def multilevel_density(samples: LevelSampleSet, grid: Grid, kern: SmoothingKernel) -> np.ndarray:
    """Raw multilevel estimate on ``grid``; may be negative at some grid points."""
    rho = kde(samples.Y[0], grid, kern)
    for Y, Z in zip(samples.Y[1:], samples.Z[1:]):
        if len(Y) == 0:
            raise ValueError("empty level")
        rho = rho + (kernel_sum(Y, grid, kern) - kernel_sum(Z, grid, kern)) / len(Y)
    return rho


def gaussian_smooth(raw: Sequence[float], sigma_grid: float) -> np.ndarray:
    """Discrete Gaussian filter of width ``sigma_grid`` grid points, cut at 4 sigma.

    Near the ends the weights that fall off the grid are dropped and the
    remainder renormalized, so constants pass through unchanged.
    """
    raw = np.asarray(raw, dtype=float)
    if sigma_grid < 0:
        raise ValueError("sigma_grid must be >= 0")
    if sigma_grid == 0:
        return raw.copy()
    radius = int(math.floor(4.0 * sigma_grid))
    offsets = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (offsets / sigma_grid) ** 2)
    w /= w.sum()
    num = np.convolve(raw, w, mode="same")
    den = np.convolve(np.ones_like(raw), w, mode="same")
    if len(raw) < len(w):
        # np.convolve 'same' returns max(len) samples; keep the centered part
        cut = (len(w) - len(raw)) // 2
        num, den = num[cut:cut + len(raw)], den[cut:cut + len(raw)]
    return num / den


@dataclass
class DensityEstimate:
    grid: Grid
    raw: np.ndarray
    smoothed: np.ndarray
    sigma_grid: float
    warnings: tuple[str, ...] = ()
    samples: LevelSampleSet | None = None

    def mass(self, smoothed: bool = False) -> float:
        """Spacing-weighted sum of the raw (or smoothed) values."""
        vals = self.smoothed if smoothed else self.raw
        return float(self.grid.spacing * vals.sum())

    def write_csv(self, path: str | os.PathLike, clamp: bool = False) -> None:
        header = "s,raw,smoothed" + (",plot" if clamp else "")
        lines = [header]
        for s, r, sm in zip(self.grid.points, self.raw, self.smoothed):
            row = f"{s:.17g},{r:.17g},{sm:.17g}"
            if clamp:
                row += f",{max(sm, 0.0):.17g}"
            lines.append(row)
        with open(path, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def edge_fraction(values: Sequence[float], grid: Grid, kern: SmoothingKernel) -> float:
    """Fraction of values within one bandwidth of a grid end, or outside the grid."""
    v = np.asarray(values, dtype=float)
    lo = grid.points[0] + kern.bandwidth
    hi = grid.points[-1] - kern.bandwidth
    return float(np.mean((v <= lo) | (v >= hi)))


def auto_grid(values: Sequence[float], kern: SmoothingKernel, k: int = 400) -> Grid:
    """``k`` points from ``floor(min - 2 delta)`` to ``ceil(max + 2 delta)`` of the values."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        raise ValueError("no finite values to place a grid around")
    pad = 2.0 * kern.bandwidth
    return Grid.linspace(math.floor(v.min() - pad), math.ceil(v.max() + pad), k)


def estimate_pipeline(A: DesignMatrix, b: Sequence[int], basis: MoveBasis, schedule: LevelSchedule,
                      start: Sequence[int], grid: Grid, kern: SmoothingKernel | None = None,
                      sigma_grid: float = 2.0, seed: int = 0,
                      statistic: Callable[[Sequence[int]], float] | None = None,
                      keep_states: bool = False) -> DensityEstimate:
    """Level chains, multilevel density and Gaussian post-smoothing in one call.

    The statistic defaults to Pearson chi-square against the fitted expected table.
    """
    if not in_fiber(A, b, start):
        raise ValueError("start point is not in the fiber")
    kern = kern or SmoothingKernel(1.0)
    if statistic is None:
        statistic = chi_square_statistic(fit_expected_table(A, b))
    cfg = ChainConfig(basis, tuple(start), 1, seed)
    samples = run_level_samples(schedule, cfg, statistic, keep_states=keep_states)
    raw = multilevel_density(samples, grid, kern)
    return DensityEstimate(grid, raw, gaussian_smooth(raw, sigma_grid), sigma_grid,
                           samples.warnings, samples)
