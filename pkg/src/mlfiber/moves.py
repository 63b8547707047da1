"""Move bases: kernel vectors of a design matrix used as Markov-chain steps."""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from math import gcd
from typing import Iterable, Sequence

from .core import DesignMatrix, DimensionError, checked, checked_dot
from .textio import format_matrix, parse_matrix

KINDS = ("markov", "lattice", "custom")


class InvalidBasisError(ValueError):
    pass


def canonical_sign(delta: Sequence[int]) -> tuple[int, ...]:
    """Negate ``delta`` if its first nonzero entry is negative."""
    for v in delta:
        if v:
            return tuple(delta) if v > 0 else tuple(-x for x in delta)
    return tuple(delta)


@dataclass(frozen=True)
class Move:
    delta: tuple[int, ...]
    support: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        delta = tuple(int(v) for v in self.delta)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "support", tuple(i for i, v in enumerate(delta) if v))

    def __len__(self):
        return len(self.delta)

    def is_zero(self) -> bool:
        return not self.support


@dataclass(frozen=True)
class MoveBasis:
    moves: tuple[Move, ...]
    kind: str = "custom"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        moves = tuple(m if isinstance(m, Move) else Move(tuple(m)) for m in self.moves)
        object.__setattr__(self, "moves", moves)
        if moves and len({len(m) for m in moves}) != 1:
            raise DimensionError("moves of different lengths")
        seen = {}
        for i, m in enumerate(moves):
            key = canonical_sign(m.delta)
            if key in seen and not m.is_zero():
                raise InvalidBasisError(f"move {i} duplicates move {seen[key]} up to sign")
            seen[key] = i

    @classmethod
    def from_vectors(cls, vectors: Iterable[Sequence[int]], kind: str = "custom") -> "MoveBasis":
        return cls(tuple(Move(tuple(v)) for v in vectors), kind)

    def __len__(self):
        return len(self.moves)

    def __iter__(self):
        return iter(self.moves)

    def vectors(self) -> list[tuple[int, ...]]:
        return [m.delta for m in self.moves]


@dataclass(frozen=True)
class BasisReport:
    residuals: tuple[tuple[int, ...], ...]
    rank: int
    expected_rank: int | None

    @property
    def rank_ok(self) -> bool | None:
        return None if self.expected_rank is None else self.rank == self.expected_rank


# -- exact integer elimination ------------------------------------------------

def _echelon(rows: list[list[int]], transform: bool = False):
    """Integer row echelon form using only unimodular row operations.

    Returns ``(E, U, rank)`` where ``E = U @ rows`` (``U`` is None unless
    requested) and the first ``rank`` rows of ``E`` are the nonzero ones.
    """
    E = [list(r) for r in rows]
    m = len(E)
    n_cols = len(E[0]) if E else 0
    U = [[int(i == j) for j in range(m)] for i in range(m)] if transform else None

    def swap(i, j):
        E[i], E[j] = E[j], E[i]
        if U is not None:
            U[i], U[j] = U[j], U[i]

    def axpy(dst, q, src):
        # row[dst] -= q * row[src]
        E[dst] = [checked(a - checked(q * b)) for a, b in zip(E[dst], E[src])]
        if U is not None:
            U[dst] = [checked(a - checked(q * b)) for a, b in zip(U[dst], U[src])]

    r = 0
    for c in range(n_cols):
        if r == m:
            break
        while True:
            nz = [i for i in range(r, m) if E[i][c]]
            if not nz:
                break
            piv = min(nz, key=lambda i: abs(E[i][c]))
            swap(r, piv)
            done = True
            for i in range(r + 1, m):
                if E[i][c]:
                    axpy(i, E[i][c] // E[r][c], r)
                    if E[i][c]:
                        done = False
            if done:
                break
        if E[r][c]:
            r += 1
    return E, U, r


def integer_rank(rows: Sequence[Sequence[int]]) -> int:
    rows = [list(r) for r in rows]
    if not rows:
        return 0
    return _echelon(rows)[2]


def _size_reduce(basis: list[list[int]]) -> list[list[int]]:
    """Pairwise size reduction ``v_i -= round(<v_i,v_j>/<v_j,v_j>) v_j`` until stable.

    Unimodular, so the generated lattice is unchanged; each accepted update
    strictly shortens a vector, which bounds the loop.
    """
    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    changed = True
    while changed:
        changed = False
        for i, j in itertools.permutations(range(len(basis)), 2):
            vj = basis[j]
            nj = dot(vj, vj)
            num = dot(basis[i], vj)
            q = (2 * num + nj) // (2 * nj)  # round to nearest
            if q:
                cand = [checked(a - q * b) for a, b in zip(basis[i], vj)]
                if dot(cand, cand) < dot(basis[i], basis[i]):
                    basis[i] = cand
                    changed = True
    return basis


def _primitive(v: Sequence[int]) -> tuple[int, ...]:
    g = 0
    for x in v:
        g = gcd(g, x)
    return tuple(x // g for x in v) if g > 1 else tuple(v)


def lattice_basis(A: DesignMatrix) -> MoveBasis:
    """Basis of the integer kernel of ``A`` with ``n - rank(A)`` primitive vectors.

    Unimodular row reduction of ``[A^T | I]``: the identity rows sitting next
    to zero rows of the reduced ``A^T`` span the kernel over the integers.
    """
    At = [list(col) for col in zip(*A.rows)]
    E, U, rank = _echelon(At, transform=True)
    kernel = [U[i] for i in range(rank, A.n_cols)]
    kernel = _size_reduce(kernel)
    vecs = sorted((canonical_sign(_primitive(v)) for v in kernel), reverse=True)
    return MoveBasis.from_vectors(vecs, kind="lattice")


# -- validation ---------------------------------------------------------------

def validate_basis(A: DesignMatrix, B: MoveBasis) -> BasisReport:
    """Check every move is a nonzero kernel vector; for lattice bases also check rank.

    Raises:
        InvalidBasisError: naming the first offending move.
    """
    residuals = []
    for i, m in enumerate(B.moves):
        if len(m) != A.n_cols:
            raise DimensionError(f"move {i} has length {len(m)}, expected {A.n_cols}")
        if m.is_zero():
            raise InvalidBasisError(f"move {i} is the zero vector")
        res = tuple(checked_dot(row, m.delta) for row in A.rows)
        if any(res):
            raise InvalidBasisError(f"move {i} {list(m.delta)} is not in the kernel: A*m = {list(res)}")
        residuals.append(res)
    rank = integer_rank(B.vectors()) if B.moves else 0
    expected = A.n_cols - integer_rank(A.rows) if B.kind == "lattice" else None
    report = BasisReport(tuple(residuals), rank, expected)
    if report.rank_ok is False:
        raise InvalidBasisError(f"lattice basis has rank {rank}, expected {expected}")
    return report


# -- generated Markov bases -----------------------------------------------------

def basic_moves_independence(r: int, c: int) -> MoveBasis:
    """All 2x2-minor moves of an ``r x c`` table, cells flattened row-major."""
    if r < 2 or c < 2:
        raise ValueError("need r, c >= 2")
    moves = []
    for i1, i2 in itertools.combinations(range(r), 2):
        for j1, j2 in itertools.combinations(range(c), 2):
            v = [0] * (r * c)
            v[i1 * c + j1] = 1
            v[i1 * c + j2] = -1
            v[i2 * c + j1] = -1
            v[i2 * c + j2] = 1
            moves.append(v)
    return MoveBasis.from_vectors(moves, kind="markov")


def basic_moves_no3factor_2x2xK(K: int) -> MoveBasis:
    """Degree-8 moves of the 2x2xK no-three-factor model.

    Cells are laid out as K consecutive blocks of 4; within a block the
    pattern ``(+1, -1, -1, +1)`` sits at block ``k`` and its negation at
    block ``l`` for every pair ``k < l``.
    """
    if K < 2:
        raise ValueError("need K >= 2")
    pattern = (1, -1, -1, 1)
    moves = []
    for k, l in itertools.combinations(range(K), 2):
        v = [0] * (4 * K)
        for p in range(4):
            v[4 * k + p] = pattern[p]
            v[4 * l + p] = -pattern[p]
        moves.append(v)
    return MoveBasis.from_vectors(moves, kind="markov")


# -- file I/O -----------------------------------------------------------------

def parse_basis(text: str, A: DesignMatrix, kind: str = "markov") -> MoveBasis:
    rows = parse_matrix(text)
    basis = MoveBasis.from_vectors(rows, kind=kind)
    validate_basis(A, basis)
    return basis


def load_basis(path: str | os.PathLike, A: DesignMatrix, kind: str = "markov") -> MoveBasis:
    with open(path, "rb") as fh:
        text = fh.read().decode("ascii")
    return parse_basis(text, A, kind)


def format_basis(B: MoveBasis, n_cols: int | None = None) -> str:
    if n_cols is None and B.moves:
        n_cols = len(B.moves[0])
    return format_matrix(B.vectors(), n_cols)


def save_basis(path: str | os.PathLike, B: MoveBasis, n_cols: int | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(format_basis(B, n_cols).encode("ascii"))
