"""Sample-quality metrics: squared MMD with the energy-distance kernel, and the Fiber Coverage Score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

_BLOCK_ELEMS = 1 << 22  # distance-matrix entries per block


def _as_points(sample) -> np.ndarray:
    X = np.asarray(sample, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("a point sample must be a 2-d array (points x dimension)")
    return X


def energy_kernel(x: Sequence[float], y: Sequence[float]) -> float:
    """``|x| + |y| - |x - y|`` in the Euclidean norm."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("dimension mismatch")
    return float(np.linalg.norm(x) + np.linalg.norm(y) - np.linalg.norm(x - y))


def _collapse(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows with their multiplicities."""
    U, counts = np.unique(X, axis=0, return_counts=True)
    return U, counts.astype(float)


def _weighted_distance_sum(X, wx, Y, wy) -> float:
    """``sum_ij wx_i wy_j |X_i - Y_j|`` over row blocks, blocks combined with fsum."""
    rows = max(1, _BLOCK_ELEMS // max(1, len(Y)))
    parts = []
    for s in range(0, len(X), rows):
        D = cdist(X[s:s + rows], Y)
        parts.append(float(wx[s:s + rows] @ (D @ wy)))
    return math.fsum(parts)


def _energy_sum(X, wx, Y, wy) -> float:
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    return (wy.sum() * float(wx @ nx) + wx.sum() * float(wy @ ny)
            - _weighted_distance_sum(X, wx, Y, wy))


def mmd2(sample_x, sample_y, kernel: Callable = energy_kernel) -> float:
    """Squared MMD V-statistic: all index pairs, diagonal included.

    With the default energy kernel the pairwise sums run blockwise over the
    distinct points of each sample weighted by multiplicity, which is exact
    and much cheaper for chain output with repeated states. Any other kernel
    is evaluated pair by pair.
    """
    X = _as_points(sample_x)
    Y = _as_points(sample_y)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("empty sample")
    if X.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    m, n = len(X), len(Y)
    if kernel is energy_kernel:
        Xu, wx = _collapse(X)
        Yu, wy = _collapse(Y)
        kxx = _energy_sum(Xu, wx, Xu, wx)
        kyy = _energy_sum(Yu, wy, Yu, wy)
        kxy = _energy_sum(Xu, wx, Yu, wy)
    else:
        kxx = math.fsum(kernel(a, b) for a in X for b in X)
        kyy = math.fsum(kernel(a, b) for a in Y for b in Y)
        kxy = math.fsum(kernel(a, b) for a in X for b in Y)
    return kxx / (m * m) + kyy / (n * n) - 2.0 * kxy / (m * n)


class ReferenceMMD:
    """Repeated :func:`mmd2` against one fixed reference sample.

    The reference self-term is computed once; each call then costs one cross
    sum plus the candidate's own self-term.
    """

    def __init__(self, reference):
        R = _as_points(reference)
        if len(R) == 0:
            raise ValueError("empty reference sample")
        self.m = len(R)
        self._R, self._wr = _collapse(R)
        self._krr = _energy_sum(self._R, self._wr, self._R, self._wr)

    def __call__(self, sample) -> float:
        X = _as_points(sample)
        if len(X) == 0:
            raise ValueError("empty sample")
        n = len(X)
        Xu, wx = _collapse(X)
        kxx = _energy_sum(Xu, wx, Xu, wx)
        kxr = _energy_sum(Xu, wx, self._R, self._wr)
        return self._krr / (self.m * self.m) + kxx / (n * n) - 2.0 * kxr / (self.m * n)


# -- Fiber Coverage Score ---------------------------------------------------------

@dataclass(frozen=True)
class VoronoiCenterSet:
    centers: np.ndarray
    min_separation: float = 0.0

    def __post_init__(self):
        C = _as_points(self.centers)
        if len(C) < 1:
            raise ValueError("need at least one center")
        C.setflags(write=False)
        object.__setattr__(self, "centers", C)

    @property
    def K(self) -> int:
        return len(self.centers)


def _greedy_indices(C: np.ndarray, r: float, first: Sequence[int] = ()) -> list[int]:
    """Indices kept by the greedy pass; ``first`` is kept unconditionally."""
    keep = list(first)
    chosen = set(keep)
    kept = np.empty_like(C)
    kept[:len(keep)] = C[keep]
    K = len(keep)
    for i, c in enumerate(C):
        if i in chosen:
            continue
        # compare distances, not squares: r * r underflows for tiny r
        if K == 0 or math.sqrt(((kept[:K] - c) ** 2).sum(axis=1).min()) >= r:
            kept[K] = c
            K += 1
            keep.append(i)
    return keep


def thin_centers(candidates, r: float) -> VoronoiCenterSet:
    """Greedy pass in input order, keeping a candidate at distance >= r from all kept ones."""
    if r < 0:
        raise ValueError("r must be >= 0")
    C = _as_points(candidates)
    if len(C) == 0:
        raise ValueError("no candidates")
    return _centers(C, _greedy_indices(C, r), r)


def _centers(C: np.ndarray, idx: list[int], r: float) -> VoronoiCenterSet:
    out = C[idx]
    if len(out) > 1 and r > 0:
        assert cdist(out, out)[np.triu_indices(len(out), 1)].min() >= r * (1 - 1e-12)
    return VoronoiCenterSet(out, float(r))


def nearest_center(sample, centers: VoronoiCenterSet) -> np.ndarray:
    """Index of the nearest center for every point; ties go to the lowest index."""
    X = _as_points(sample)
    rows = max(1, _BLOCK_ELEMS // centers.K)
    out = np.empty(len(X), dtype=np.int64)
    for s in range(0, len(X), rows):
        out[s:s + rows] = np.argmin(cdist(X[s:s + rows], centers.centers, "sqeuclidean"), axis=1)
    return out


def fcs(sample, centers: VoronoiCenterSet) -> float:
    """Fraction of Voronoi cells that contain at least one sample point."""
    X = np.asarray(sample, dtype=float)
    if X.size == 0:
        return 0.0
    X = np.unique(_as_points(X), axis=0)
    hit = np.unique(nearest_center(X, centers))
    return len(hit) / centers.K


def fcs_sweep(sample, candidates, radii: Sequence[float]) -> list[tuple[float, int, float]]:
    """``(r, K, H_K)`` for each radius of a strictly decreasing sequence.

    The centers at each radius extend those kept at the previous one, so the
    center sets are nested and ``K`` never decreases along the sweep. (Plain
    greedy thinning from scratch does not have that property.)
    """
    radii = [float(r) for r in radii]
    if any(a <= b for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    C = _as_points(candidates)
    if len(C) == 0:
        raise ValueError("no candidates")
    out = []
    idx: list[int] = []
    for r in radii:
        if r < 0:
            raise ValueError("radii must be >= 0")
        idx = _greedy_indices(C, r, idx)
        centers = _centers(C, idx, r)
        out.append((r, centers.K, fcs(sample, centers)))
    return out
