"""Bundled benchmark fibers plus brute-force enumeration and counting oracles."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import DesignMatrix, FiberPoint, in_fiber
from .moves import (
    MoveBasis,
    basic_moves_independence,
    lattice_basis,
    parse_basis,
    validate_basis,
)
from .textio import parse_matrix


class CapExceededError(RuntimeError):
    """Enumeration stopped because the fiber has more than ``cap`` points."""

    def __init__(self, cap: int, partial_count: int):
        super().__init__(f"fiber has more than {cap} points (stopped after {partial_count})")
        self.cap = cap
        self.partial_count = partial_count


class UnsupportedFiberError(ValueError):
    pass


@dataclass(frozen=True)
class FiberInstance:
    name: str
    A: DesignMatrix
    b: tuple[int, ...]
    start: FiberPoint
    lattice_basis: MoveBasis
    markov_basis: MoveBasis | None = None
    known_count: int | None = None
    # default statistic grid (lo, hi, points), when one is established for the instance
    grid: tuple[float, float, int] | None = None

    def __post_init__(self):
        if not in_fiber(self.A, self.b, self.start):
            raise ValueError(f"{self.name}: start point is not in the fiber")
        validate_basis(self.A, self.lattice_basis)
        if self.markov_basis is not None:
            validate_basis(self.A, self.markov_basis)

    @property
    def moves(self) -> MoveBasis:
        """The Markov basis when one is known, otherwise the lattice basis."""
        return self.markov_basis if self.markov_basis is not None else self.lattice_basis


# -- design matrices ----------------------------------------------------------

def independence_design(r: int, c: int) -> DesignMatrix:
    """Row sums then column sums of an ``r x c`` table flattened row-major."""
    rows = [[int(k // c == i) for k in range(r * c)] for i in range(r)]
    rows += [[int(k % c == j) for k in range(r * c)] for j in range(c)]
    return DesignMatrix.from_rows(rows)


def no3factor_design(K: int) -> DesignMatrix:
    """Two-way margins of a 2x2xK table stored as K blocks of 4 cells.

    Rows: the 4 within-block positions summed over blocks, then the pairs
    (0,1),(2,3) of every block, then (0,2) of every block, then (1,3).
    """
    n = 4 * K
    rows = [[int(j % 4 == p) for j in range(n)] for p in range(4)]
    for k in range(K):
        for pair in ((0, 1), (2, 3)):
            rows.append([int(j // 4 == k and j % 4 in pair) for j in range(n)])
    for pair in ((0, 2), (1, 3)):
        for k in range(K):
            rows.append([int(j // 4 == k and j % 4 in pair) for j in range(n)])
    return DesignMatrix.from_rows(rows)


def hemmecke_design(k: int) -> DesignMatrix:
    """The (2k+1) x (4k+2) block matrix ``[[I I 0 0 -1 0], [0 0 I I 0 -1], [0 0 0 0 1 1]]``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = 4 * k + 2
    rows = []
    for i in range(k):
        v = [0] * n
        v[i] = v[k + i] = 1
        v[4 * k] = -1
        rows.append(v)
    for i in range(k):
        v = [0] * n
        v[2 * k + i] = v[3 * k + i] = 1
        v[4 * k + 1] = -1
        rows.append(v)
    rows.append([0] * (4 * k) + [1, 1])
    return DesignMatrix.from_rows(rows)


# -- bundled instances ----------------------------------------------------------

def _data(name: str) -> str:
    return resources.files("mlfiber").joinpath("data", name).read_text(encoding="ascii")


@lru_cache(maxsize=None)
def jobsat_4x4() -> FiberInstance:
    A = DesignMatrix.from_rows(parse_matrix(_data("jobsat4x4.design.txt")))
    (u,) = parse_matrix(_data("jobsat4x4.start.txt"))
    return FiberInstance(
        name="jobsat4x4",
        A=A,
        b=A.apply(u),
        start=tuple(u),
        lattice_basis=lattice_basis(A),
        markov_basis=parse_basis(_data("jobsat4x4.markov.txt"), A, kind="markov"),
        known_count=185_227_230,
        grid=(100.0, 500.0, 400),
    )


@lru_cache(maxsize=None)
def no3factor_2x2x5() -> FiberInstance:
    A = DesignMatrix.from_rows(parse_matrix(_data("no3factor225.design.txt")))
    (u,) = parse_matrix(_data("no3factor225.start.txt"))
    return FiberInstance(
        name="no3factor225",
        A=A,
        b=A.apply(u),
        start=tuple(u),
        lattice_basis=lattice_basis(A),
        markov_basis=parse_basis(_data("no3factor225.markov.txt"), A, kind="markov"),
    )


@lru_cache(maxsize=None)
def hemmecke(k: int = 1) -> FiberInstance:
    A = hemmecke_design(k)
    b = (0,) * (2 * k) + (1,)
    x0 = (0,) * k + (1,) * k + (0,) * (2 * k) + (1, 0)
    return FiberInstance(
        name=f"hemmecke{k}",
        A=A,
        b=b,
        start=x0,
        lattice_basis=lattice_basis(A),
        known_count=2 ** (k + 1),
    )


def two_way(rows: Sequence[int], cols: Sequence[int], start: Sequence[int] | None = None) -> FiberInstance:
    """Independence fiber of an ``r x c`` table with given margins.

    Without an explicit start the north-west corner rule supplies one.
    """
    r, c = len(rows), len(cols)
    if sum(rows) != sum(cols):
        raise ValueError("row and column totals differ")
    if start is None:
        rr, cc = list(rows), list(cols)
        table = [0] * (r * c)
        i = j = 0
        while i < r and j < c:
            v = min(rr[i], cc[j])
            table[i * c + j] = v
            rr[i] -= v
            cc[j] -= v
            if rr[i] == 0:
                i += 1
            else:
                j += 1
        start = table
    A = independence_design(r, c)
    return FiberInstance(
        name=f"twoway{r}x{c}",
        A=A,
        b=tuple(rows) + tuple(cols),
        start=tuple(start),
        lattice_basis=lattice_basis(A),
        markov_basis=basic_moves_independence(r, c) if r >= 2 and c >= 2 else None,
    )


CATALOG: dict[str, Callable[..., FiberInstance]] = {
    "jobsat4x4": jobsat_4x4,
    "no3factor225": no3factor_2x2x5,
    "hemmecke": hemmecke,
}


def get_instance(name: str, k: int = 1) -> FiberInstance:
    if name not in CATALOG:
        raise KeyError(f"unknown instance {name!r}; known: {', '.join(CATALOG)}")
    return CATALOG[name](k) if name == "hemmecke" else CATALOG[name]()


# -- enumeration ----------------------------------------------------------------

def _cell_upper_bounds(A: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Integer upper bound of every cell over the fiber polytope, or None if empty."""
    n = A.shape[1]
    ub = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = np.zeros(n)
        c[i] = -1.0
        res = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * n, method="highs")
        if res.status == 2:
            return None
        if res.status == 3:
            raise UnsupportedFiberError("fiber polytope is unbounded")
        if res.status != 0:
            raise RuntimeError(f"bound LP failed: {res.message}")
        ub[i] = math.floor(-res.fun + 1e-7)
    return ub


def enumerate_fiber(A: DesignMatrix, b: Sequence[int], cap: int = 100_000) -> list[FiberPoint]:
    """All lattice points of the fiber in lexicographic order.

    Depth-first over cells in index order. Per-cell upper bounds come from
    one LP each; a branch is cut as soon as some constraint's residual lies
    outside what the unassigned cells can still contribute.

    Raises:
        CapExceededError: more than ``cap`` points exist.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    b = [int(v) for v in b]
    M = A.to_numpy()
    ub = _cell_upper_bounds(M.astype(float), np.asarray(b, dtype=float))
    if ub is None:
        return []
    d, n = M.shape
    ub = ub.tolist()
    cols = [[int(M[r, i]) for r in range(d)] for i in range(n)]
    # suffix ranges: what cells i..n-1 can still add to each row
    lo = [[0] * d for _ in range(n + 1)]
    hi = [[0] * d for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for r in range(d):
            v = cols[i][r] * ub[i]
            lo[i][r] = lo[i + 1][r] + min(0, v)
            hi[i][r] = hi[i + 1][r] + max(0, v)

    out: list[FiberPoint] = []
    x = [0] * n
    resid = list(b)

    def dfs(i: int):
        if i == n:
            if not any(resid):
                if len(out) >= cap:
                    raise CapExceededError(cap, len(out) + 1)
                out.append(tuple(x))
            return
        col = cols[i]
        for v in range(ub[i] + 1):
            ok = True
            for r in range(d):
                rem = resid[r] - col[r] * v
                if rem < lo[i + 1][r] or rem > hi[i + 1][r]:
                    ok = False
                    break
            if ok:
                x[i] = v
                for r in range(d):
                    resid[r] -= col[r] * v
                dfs(i + 1)
                for r in range(d):
                    resid[r] += col[r] * v
        x[i] = 0

    dfs(0)
    return out


# -- counting -------------------------------------------------------------------

def detect_two_way(A: DesignMatrix) -> tuple[int, int] | None:
    """Return ``(r, c)`` if ``A`` is exactly ``independence_design(r, c)``."""
    d, n = A.shape
    for r in range(1, n + 1):
        if n % r == 0 and r + n // r == d and A == independence_design(r, n // r):
            return r, n // r
    return None


def _bounded_compositions(total: int, bounds: tuple[int, ...]) -> int:
    """Number of vectors ``0 <= x_j <= bounds[j]`` summing to ``total``."""
    ways = [1] + [0] * total
    for s in bounds:
        prefix = [0] * (total + 2)
        for t in range(total + 1):
            prefix[t + 1] = prefix[t] + ways[t]
        ways = [prefix[t + 1] - prefix[max(0, t - s)] for t in range(total + 1)]
    return ways[total]


def _compositions(total: int, bounds: Sequence[int]):
    """Yield every ``x`` with ``0 <= x_j <= bounds[j]`` and ``sum(x) == total``."""
    c = len(bounds)
    suffix = [0] * (c + 1)
    for j in range(c - 1, -1, -1):
        suffix[j] = suffix[j + 1] + bounds[j]
    x = [0] * c

    def rec(j, left):
        if j == c - 1:
            if left <= bounds[j]:
                x[j] = left
                yield tuple(x)
            return
        for v in range(max(0, left - suffix[j + 1]), min(bounds[j], left) + 1):
            x[j] = v
            yield from rec(j + 1, left - v)

    if total <= suffix[0]:
        yield from rec(0, total)


def count_two_way_tables(rows: Sequence[int], cols: Sequence[int]) -> int:
    """Exact number of nonnegative integer tables with the given margins.

    Dynamic programming over rows keyed on the sorted remaining column sums.
    Rows are processed smallest first; the last two rows are closed out by a
    bounded-composition count since the final row is forced.
    """
    rows = sorted(int(v) for v in rows)
    cols = tuple(sorted(int(v) for v in cols))
    if any(v < 0 for v in rows) or any(v < 0 for v in cols) or sum(rows) != sum(cols):
        return 0
    r = len(rows)

    @lru_cache(maxsize=None)
    def count(i: int, remaining: tuple[int, ...]) -> int:
        if i == r - 1:
            return 1  # last row is forced and totals agree
        if i == r - 2:
            return _bounded_compositions(rows[i], remaining)
        total = 0
        for x in _compositions(rows[i], remaining):
            total += count(i + 1, tuple(sorted(s - v for s, v in zip(remaining, x))))
        return total

    result = count(0, cols)
    count.cache_clear()
    return result


def count_fiber(A: DesignMatrix, b: Sequence[int], cap: int = 1_000_000) -> int:
    """Exact fiber size: DP for two-way tables, otherwise enumeration up to ``cap``."""
    shape = detect_two_way(A)
    if shape is not None:
        r, _ = shape
        return count_two_way_tables(b[:r], b[r:])
    try:
        return len(enumerate_fiber(A, b, cap=cap))
    except CapExceededError as exc:
        raise UnsupportedFiberError(
            f"no counting structure detected and the fiber exceeds {cap} points") from exc


# -- exact laws and reachability --------------------------------------------------

def exact_distribution(points: Sequence[Sequence[int]], law: str = "uniform") -> np.ndarray:
    """Probability of each point under the uniform or hypergeometric (``prod 1/x_i!``) law."""
    if len(points) == 0:
        raise ValueError("empty point list")
    if law == "uniform":
        return np.full(len(points), 1.0 / len(points))
    if law != "hypergeometric":
        raise ValueError(f"unknown law {law!r}")
    logw = np.array([-sum(math.lgamma(v + 1) for v in p) for p in points])
    w = np.exp(logw - logw.max())
    return w / w.sum()


def reachable(points: Sequence[FiberPoint], basis: MoveBasis, start: FiberPoint) -> set[FiberPoint]:
    """Breadth-first search of the fiber graph over ``points`` with edges ``+-basis``."""
    pts = set(map(tuple, points))
    start = tuple(start)
    seen = {start}
    queue = deque([start])
    deltas = [m.delta for m in basis] + [tuple(-v for v in m.delta) for m in basis]
    while queue:
        g = queue.popleft()
        for d in deltas:
            h = tuple(a + b for a, b in zip(g, d))
            if h in pts and h not in seen:
                seen.add(h)
                queue.append(h)
    return seen
