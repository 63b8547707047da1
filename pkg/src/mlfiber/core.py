"""Exact integer fibers: design matrices, sufficient statistics, and the chi-square statistic.

A fiber is the set of nonnegative integer vectors ``x`` with ``A @ x == b``.
All integer arithmetic here runs on Python ints and is range-checked against
the signed 64-bit interval, so an overflow raises instead of wrapping.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

FiberPoint = tuple[int, ...]
SufficientStatistic = tuple[int, ...]


class IntegerOverflowError(OverflowError):
    """An exact integer computation left the signed 64-bit range."""


class DimensionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def checked(value: int) -> int:
    if value < INT64_MIN or value > INT64_MAX:
        raise IntegerOverflowError(f"integer {value} outside the signed 64-bit range")
    return value


def checked_dot(row: Sequence[int], x: Sequence[int]) -> int:
    """Integer dot product; every partial product and partial sum is range-checked."""
    total = 0
    for a, v in zip(row, x):
        if a and v:
            total = checked(total + checked(a * v))
    return total


def _as_int(v) -> int:
    if isinstance(v, (bool, np.bool_)):
        raise TypeError("boolean entries are not integers")
    if isinstance(v, (int, np.integer)):
        return checked(int(v))
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return checked(int(v))
    raise TypeError(f"entry {v!r} is not an integer")


@dataclass(frozen=True)
class DesignMatrix:
    """Integer matrix ``A`` (d x n) mapping a table to its sufficient statistic."""

    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(_as_int(v) for v in r) for r in self.rows)
        if not rows or not rows[0]:
            raise DimensionError("a design matrix needs d >= 1 rows and n >= 1 columns")
        if any(len(r) != len(rows[0]) for r in rows):
            raise DimensionError("ragged design matrix")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_rows(cls, rows) -> "DesignMatrix":
        if isinstance(rows, np.ndarray):
            rows = rows.tolist()
        return cls(tuple(tuple(r) for r in rows))

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.rows[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def to_numpy(self, dtype=np.int64) -> np.ndarray:
        return np.array(self.rows, dtype=dtype)

    def apply(self, x: Sequence[int]) -> tuple[int, ...]:
        if len(x) != self.n_cols:
            raise DimensionError(f"vector of length {len(x)} does not match {self.n_cols} columns")
        x = [_as_int(v) for v in x]
        return tuple(checked_dot(r, x) for r in self.rows)

    def is_nonnegative_01(self) -> bool:
        return all(v in (0, 1) for r in self.rows for v in r)


def sufficient_statistic(A: DesignMatrix, x: Sequence[int]) -> SufficientStatistic:
    """Exact ``A @ x``."""
    return A.apply(x)


def is_feasible(x: Sequence[int]) -> bool:
    return all(v >= 0 for v in x)


def in_fiber(A: DesignMatrix, b: Sequence[int], x: Sequence[int]) -> bool:
    return is_feasible(x) and A.apply(x) == tuple(b)


@dataclass(frozen=True)
class ExpectedTable:
    """Fitted expected counts for a fiber.

    ``excluded`` lists cells whose fitted value is zero (forced by a zero
    margin); they are skipped by :func:`chi_square`.
    """

    cells: np.ndarray
    residual: float
    iterations: int
    excluded: tuple[int, ...] = ()
    warnings: tuple[str, ...] = field(default=())

    @property
    def included(self) -> np.ndarray:
        mask = np.ones(len(self.cells), dtype=bool)
        mask[list(self.excluded)] = False
        return mask


def fit_expected_table(A: DesignMatrix, b: Sequence[int], tol: float = 1e-10,
                       max_iter: int = 1000) -> ExpectedTable:
    """Fit log-linear expected counts to the margins ``b`` by iterative proportional fitting.

    Each row of ``A`` is treated as one marginal constraint and the cells in
    its support are rescaled in turn, starting from the all-ones table. Only
    0/1 design matrices (the contingency-table case) are supported.

    Raises:
        ValueError: if ``A`` is not a 0/1 matrix or ``b`` has a negative entry.
        ConvergenceError: if ``max(|A e - b|) > tol`` after ``max_iter`` sweeps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not A.is_nonnegative_01():
        raise ValueError("iterative proportional fitting needs a 0/1 design matrix")
    b_arr = np.asarray([_as_int(v) for v in b], dtype=float)
    if len(b_arr) != A.n_rows:
        raise DimensionError("margin vector length does not match design rows")
    if np.any(b_arr < 0):
        raise ValueError("negative margin")

    M = A.to_numpy(dtype=float)
    supports = [np.flatnonzero(r) for r in M]
    e = np.ones(A.n_cols)
    notes = []
    zero_rows = [i for i in range(A.n_rows) if b_arr[i] == 0]
    if zero_rows:
        notes.append(f"zero margin in rows {zero_rows}; their cells are fixed at 0 and excluded")

    residual = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        for i, cols in enumerate(supports):
            cur = e[cols].sum()
            if cur > 0:
                e[cols] *= b_arr[i] / cur
            elif b_arr[i] > 0:
                raise ValueError(f"margin {i} is positive but every cell in its support is zero")
        residual = float(np.max(np.abs(M @ e - b_arr)))
        if residual <= tol:
            break
    else:
        raise ConvergenceError(f"IPF did not reach tol={tol} in {max_iter} sweeps (residual {residual:.3e})")

    excluded = tuple(int(j) for j in np.flatnonzero(e <= 0))
    if excluded:
        warnings.warn(f"{len(excluded)} zero expected cell(s) excluded from chi-square", RuntimeWarning, stacklevel=2)
    e.setflags(write=False)
    return ExpectedTable(cells=e, residual=residual, iterations=it, excluded=excluded, warnings=tuple(notes))


def chi_square(x: Sequence[int], e: ExpectedTable) -> float:
    """Pearson statistic ``sum((x - e)^2 / e)`` over the included cells."""
    if len(x) != len(e.cells):
        raise DimensionError("table and expected table lengths differ")
    mask = e.included
    cells = e.cells[mask]
    if np.any(cells <= 0):
        raise ValueError("nonpositive expected cell")
    diff = np.asarray(x, dtype=float)[mask] - cells
    return float(np.sum(diff * diff / cells))


def chi_square_statistic(e: ExpectedTable) -> Callable[[Sequence[int]], float]:
    """Return a fast scalar map ``x -> chi_square(x, e)`` for use inside chains."""
    idx = [int(i) for i in np.flatnonzero(e.included)]
    exp = [float(e.cells[i]) for i in idx]
    if any(v <= 0 for v in exp):
        raise ValueError("nonpositive expected cell")
    pairs = list(zip(idx, exp))

    def stat(x: Sequence[int]) -> float:
        s = 0.0
        for i, ei in pairs:
            d = x[i] - ei
            s += d * d / ei
        return s

    return stat


def euclidean_norm_statistic(x: Sequence[int]) -> float:
    return math.sqrt(sum(v * v for v in x))
