"""Markov chains on fibers and the Brownian walker used to place Voronoi centers.

Three discrete chains are provided:

* the step-size sampler that picks a move uniformly and then a multiple ``j``
  of it from the whole feasible range, with weights ``prod 1/(g+j f)!``
  (hypergeometric), ``prod (g+j f)!`` (inverted) or flat;
* the accept-all walk that proposes ``g +- m f`` for a fixed multiplier ``m``
  and holds when the proposal leaves the nonnegative orthant;
* per-level runs of the accept-all walk feeding the multilevel estimator.

Random draws are taken in blocks from :class:`numpy.random.Generator`
instances seeded through :class:`numpy.random.SeedSequence`, so a chain is a
pure function of its seed.
"""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .core import FiberPoint, is_feasible
from .moves import MoveBasis

MODES = ("hypergeometric", "inverted", "uniform")
_BLOCK = 1 << 15


class UnboundedRangeError(ValueError):
    pass


class BrownianStallError(RuntimeError):
    pass


class LevelStarvationWarning(RuntimeWarning):
    pass


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the stream named by ``keys`` under ``seed``."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class ChainConfig:
    basis: MoveBasis
    start: FiberPoint
    steps: int
    seed: int
    record_every: int = 1
    burn_in: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if not is_feasible(self.start):
            raise ValueError("start point has a negative entry")
        if len(self.basis) == 0:
            raise ValueError("empty move basis")


@dataclass(frozen=True)
class LevelSchedule:
    """Move multipliers from the coarsest level down to 1, and samples per level."""

    multipliers: tuple[int, ...]
    samples_per_level: tuple[int, ...]

    def __post_init__(self):
        m = tuple(int(v) for v in self.multipliers)
        n = tuple(int(v) for v in self.samples_per_level)
        object.__setattr__(self, "multipliers", m)
        object.__setattr__(self, "samples_per_level", n)
        if not m or len(m) != len(n):
            raise ValueError("multipliers and samples_per_level must be nonempty and equally long")
        if m[-1] != 1:
            raise ValueError("the last multiplier must be 1")
        if any(a <= b for a, b in zip(m, m[1:])) or m[-1] < 1:
            raise ValueError("multipliers must be strictly decreasing positive integers")
        if any(v < 1 for v in n):
            raise ValueError("every level needs at least one sample")

    @classmethod
    def halving(cls, n_levels: int = 4, base: int = 100_000) -> "LevelSchedule":
        """``N_l = floor(base / 2**(l-1))`` with multipliers ``n_levels, ..., 1``."""
        return cls(tuple(range(n_levels, 0, -1)), tuple(base // 2**l for l in range(n_levels)))

    @property
    def n_levels(self) -> int:
        return len(self.multipliers)

    @property
    def total(self) -> int:
        return sum(self.samples_per_level)

    def scaled_to(self, total: int) -> "LevelSchedule":
        """Same proportions, renormalized to ``total`` samples (largest remainder rounding)."""
        L = self.n_levels
        if total < L:
            raise ValueError(f"need at least {L} samples for {L} levels")
        w = np.asarray(self.samples_per_level, dtype=float)
        raw = w / w.sum() * total
        n = np.maximum(np.floor(raw).astype(int), 1)
        while n.sum() > total:
            n[np.argmax(n)] -= 1
        order = np.argsort(-(raw - np.floor(raw)), kind="stable")
        i = 0
        while n.sum() < total:
            n[order[i % L]] += 1
            i += 1
        return LevelSchedule(self.multipliers, tuple(int(v) for v in n))


@dataclass(frozen=True)
class BrownianConfig:
    lattice_basis: MoveBasis
    start: FiberPoint
    n_points: int
    seed: int
    sigma: float = 1.0
    step_dt: float = 0.1
    max_rejections: int = 100_000

    def __post_init__(self):
        if self.lattice_basis.kind != "lattice":
            raise ValueError("Brownian centers need a lattice basis")
        if not is_feasible(self.start):
            raise ValueError("start point has a negative entry")
        if self.sigma < 0 or self.step_dt <= 0:
            raise ValueError("need sigma >= 0 and step_dt > 0")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")


# -- single steps -----------------------------------------------------------------

def feasible_step_range(g: Sequence[int], f: Sequence[int]) -> tuple[int, int]:
    """Largest integer interval ``[j_min, j_max]`` with ``g + j*f >= 0``.

    Raises:
        UnboundedRangeError: if ``f`` has entries of only one sign.
    """
    lo = -math.inf
    hi = math.inf
    for gi, fi in zip(g, f):
        if fi > 0:
            lo = max(lo, -(gi // fi))
        elif fi < 0:
            hi = min(hi, gi // -fi)
    if lo == -math.inf or hi == math.inf:
        raise UnboundedRangeError(f"move {list(f)} has entries of a single sign")
    return int(lo), int(hi)


def _log_factorials(size: int) -> list[float]:
    return [math.lgamma(k + 1) for k in range(size + 1)]


def step_log_weights(g: Sequence[int], f: Sequence[int], mode: str) -> tuple[int, np.ndarray]:
    """``(j_min, log_weights)`` over the feasible range of ``j`` for one move."""
    if mode not in MODES:
        raise ValueError(f"unknown step mode {mode!r}")
    jmin, jmax = feasible_step_range(g, f)
    js = np.arange(jmin, jmax + 1)
    if mode == "uniform":
        return jmin, np.zeros(len(js))
    sign = -1.0 if mode == "hypergeometric" else 1.0
    logw = np.zeros(len(js))
    for gi, fi in zip(g, f):
        if fi:
            logw += sign * np.array([math.lgamma(gi + j * fi + 1) for j in js])
    return jmin, logw


def _pick(logw: Sequence[float], u: float) -> int:
    top = max(logw)
    w = [math.exp(v - top) for v in logw]
    target = u * sum(w)
    acc = 0.0
    for k, wk in enumerate(w):
        acc += wk
        if target < acc:
            return k
    return len(w) - 1


def ds_step(g: Sequence[int], basis: MoveBasis, mode: str, rng: np.random.Generator) -> FiberPoint:
    """One move of the step-size sampler; see :class:`StepSizeSampler`."""
    stepper = StepSizeSampler(basis, mode)
    state = list(g)
    stepper.advance(state, int(rng.integers(len(basis))), float(rng.random()))
    return tuple(state)


def uniform_walk_step(g: Sequence[int], basis: MoveBasis, multiplier: int, rng: np.random.Generator) -> FiberPoint:
    """One proposal ``g + multiplier*s*f`` of the accept-all walk; returns ``g`` if infeasible."""
    stepper = UniformWalk(basis, multiplier)
    state = list(g)
    stepper.advance(state, int(rng.integers(len(basis))), int(rng.integers(2)))
    return tuple(state)


# -- steppers -----------------------------------------------------------------------

class UniformWalk:
    """Accept-all walk with a fixed move multiplier; infeasible proposals hold the chain."""

    def __init__(self, basis: MoveBasis, multiplier: int = 1):
        if multiplier < 1:
            raise ValueError("multiplier must be a positive integer")
        self.basis = basis
        self.multiplier = int(multiplier)
        self._moves = [[(i, m.delta[i]) for i in m.support] for m in basis]
        self.accepted = 0

    def advance(self, g: list[int], move: int, sign_bit: int) -> bool:
        k = self.multiplier if sign_bit else -self.multiplier
        sup = self._moves[move]
        for i, d in sup:
            if g[i] + k * d < 0:
                return False
        for i, d in sup:
            g[i] += k * d
        self.accepted += 1
        return True

    def walk(self, g: Sequence[int], n_steps: int, rng: np.random.Generator) -> Iterator[list[int]]:
        """Yield the (mutable, shared) state after each of ``n_steps`` steps."""
        state = list(g)
        M = len(self._moves)
        done = 0
        while done < n_steps:
            size = min(_BLOCK, n_steps - done)
            moves = rng.integers(M, size=size).tolist()
            signs = rng.integers(2, size=size).tolist()
            for mv, sb in zip(moves, signs):
                self.advance(state, mv, sb)
                yield state
            done += size


class StepSizeSampler:
    """Pick a move uniformly, then a multiple ``j`` from its full feasible range.

    ``mode`` selects the weights on ``j``: ``"hypergeometric"`` uses
    ``prod_x 1/(g(x)+j f(x))!`` over the move's support, ``"inverted"`` uses
    ``prod_x (g(x)+j f(x))!`` and ``"uniform"`` is flat. Weights are formed
    in log space and shifted by their maximum before exponentiation.
    """

    def __init__(self, basis: MoveBasis, mode: str = "hypergeometric"):
        if mode not in MODES:
            raise ValueError(f"unknown step mode {mode!r}")
        self.basis = basis
        self.mode = mode
        self._moves = [[(i, m.delta[i]) for i in m.support] for m in basis]
        for sup in self._moves:
            if all(d > 0 for _, d in sup) or all(d < 0 for _, d in sup):
                raise UnboundedRangeError("a move with entries of a single sign has an unbounded step range")
        self._lf = _log_factorials(64)
        self.accepted = 0

    def _lfact(self, k: int) -> float:
        if k >= len(self._lf):
            self._lf = _log_factorials(2 * k)
        return self._lf[k]

    def advance(self, g: list[int], move: int, u: float) -> bool:
        sup = self._moves[move]
        lo = -math.inf
        hi = math.inf
        for i, d in sup:
            if d > 0:
                v = -(g[i] // d)
                if v > lo:
                    lo = v
            else:
                v = g[i] // -d
                if v < hi:
                    hi = v
        lo, hi = int(lo), int(hi)
        if lo == hi:
            return False
        if self.mode == "uniform":
            j = lo + min(int(u * (hi - lo + 1)), hi - lo)
        else:
            sign = -1.0 if self.mode == "hypergeometric" else 1.0
            lf = self._lfact
            logw = [sign * sum(lf(g[i] + j * d) for i, d in sup) for j in range(lo, hi + 1)]
            j = lo + _pick(logw, u)
        if j:
            for i, d in sup:
                g[i] += j * d
            self.accepted += 1
        return bool(j)

    def walk(self, g: Sequence[int], n_steps: int, rng: np.random.Generator) -> Iterator[list[int]]:
        state = list(g)
        M = len(self._moves)
        done = 0
        while done < n_steps:
            size = min(_BLOCK, n_steps - done)
            moves = rng.integers(M, size=size).tolist()
            us = rng.random(size).tolist()
            for mv, u in zip(moves, us):
                self.advance(state, mv, u)
                yield state
            done += size


# -- chains -------------------------------------------------------------------------

@dataclass
class ChainRecord:
    """Recorded states (one row each) and their statistic values."""

    states: np.ndarray
    values: np.ndarray
    accepted: int
    steps: int

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        for s, v in zip(self.states, self.values):
            yield tuple(int(x) for x in s), float(v)


def run_chain(cfg: ChainConfig, stepper, statistic: Callable[[Sequence[int]], float] | None = None,
              check: Callable[[Sequence[int]], bool] | None = None) -> ChainRecord:
    """Run ``burn_in + steps`` steps and record every ``record_every``-th post-burn-in state.

    ``stepper`` is a :class:`UniformWalk` or :class:`StepSizeSampler`.
    ``check``, when given, is asserted on every state.
    """
    rng = derive_rng(cfg.seed, "chain")
    n_rec = cfg.steps // cfg.record_every
    n = len(cfg.start)
    states = np.empty((n_rec, n), dtype=np.int64)
    values = np.full(n_rec, np.nan)
    stepper.accepted = 0
    k = 0
    for t, state in enumerate(stepper.walk(cfg.start, cfg.burn_in + cfg.steps, rng), start=1 - cfg.burn_in):
        if check is not None and not check(state):
            raise AssertionError(f"chain left the fiber at step {t}: {state}")
        if t > 0 and t % cfg.record_every == 0:
            states[k] = state
            if statistic is not None:
                values[k] = statistic(state)
            k += 1
    return ChainRecord(states, values, stepper.accepted, cfg.burn_in + cfg.steps)


@dataclass
class LevelSampleSet:
    """Per-level statistic values ``Y`` and coupled coarse draws ``Z``.

    Level 1 is the coarsest (largest multiplier); ``Z[0]`` is None. ``Z[l]``
    is drawn with replacement from ``Y[l-1]``.
    """

    schedule: LevelSchedule
    Y: list[np.ndarray]
    Z: list[np.ndarray | None]
    states: list[np.ndarray] | None = None
    accepted: list[int] = field(default_factory=list)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        L = len(self.Y)
        if L == 0:
            raise ValueError("empty level sample set")
        if len(self.Z) != L or self.Z[0] is not None:
            raise ValueError("Z must have one entry per level with Z[0] = None")
        for l in range(L):
            if len(self.Y[l]) == 0:
                raise ValueError(f"level {l + 1} is empty")
        for l in range(1, L):
            if len(self.Z[l]) != len(self.Y[l]):
                raise ValueError(f"level {l + 1}: |Z| != |Y|")

    @property
    def n_levels(self) -> int:
        return len(self.Y)

    def pooled_states(self) -> np.ndarray:
        if self.states is None:
            raise ValueError("states were not kept")
        return np.concatenate(self.states, axis=0)


def run_level_samples(schedule: LevelSchedule, cfg: ChainConfig,
                      statistic: Callable[[Sequence[int]], float] | None = None,
                      keep_states: bool = True) -> LevelSampleSet:
    """Independent accept-all chains per level, then the coarse-level coupling draws.

    Level ``l`` runs :class:`UniformWalk` with multiplier ``schedule.multipliers[l]``
    for ``N_l`` recorded states using the stream ``(seed, "level", l)``. For
    ``l >= 2`` the values ``Z`` are drawn uniformly with replacement from level
    ``l - 1`` using the stream ``(seed, "coupling", l)``. Levels that never
    accept a move get a :class:`LevelStarvationWarning`.
    """
    Y, Z, S, acc, notes = [], [], [], [], []
    for l, (mult, n_l) in enumerate(zip(schedule.multipliers, schedule.samples_per_level), start=1):
        level_cfg = ChainConfig(cfg.basis, cfg.start, n_l * cfg.record_every, child_seed(cfg.seed, "level", l),
                                cfg.record_every, cfg.burn_in)
        rec = run_chain(level_cfg, UniformWalk(cfg.basis, mult), statistic)
        Y.append(rec.values)
        S.append(rec.states)
        acc.append(rec.accepted)
        if rec.accepted == 0:
            msg = (f"level {l} (multiplier {mult}) made no feasible transition in "
                   f"{rec.steps} proposals; every sample is the start point")
            notes.append(msg)
            warnings.warn(msg, LevelStarvationWarning, stacklevel=2)
    Z.append(None)
    for l in range(2, schedule.n_levels + 1):
        rng = derive_rng(cfg.seed, "coupling", l)
        idx = rng.integers(len(Y[l - 2]), size=len(Y[l - 1]))
        Z.append(Y[l - 2][idx])
    return LevelSampleSet(schedule, Y, Z, S if keep_states else None, acc, tuple(notes))


def child_seed(seed: int, *keys) -> int:
    """64-bit seed for the sub-task named by ``keys``."""
    return int(derive_rng(seed, *keys).integers(2**63))


# -- Brownian centers ---------------------------------------------------------------

def brownian_points(cfg: BrownianConfig) -> np.ndarray:
    """Real points of the fiber polytope from a driftless Brownian walk in kernel coordinates.

    Each Euler step ``Z += B @ (sigma * sqrt(dt) * xi)`` uses the lattice basis
    vectors as the columns of ``B``; a step leaving the nonnegative orthant is
    discarded and redrawn. Returns ``n_points`` accepted states, one per row.

    Raises:
        BrownianStallError: after ``max_rejections`` consecutive rejections.
    """
    B = np.array(cfg.lattice_basis.vectors(), dtype=float).T
    p = B.shape[1]
    rng = derive_rng(cfg.seed, "brownian")
    z = np.asarray(cfg.start, dtype=float)
    out = np.empty((cfg.n_points, len(z)))
    scale = cfg.sigma * math.sqrt(cfg.step_dt)
    k = 0
    rejected = 0
    while k < cfg.n_points:
        xi = rng.standard_normal((_BLOCK // 8, p))
        steps = (xi * scale) @ B.T
        for dz in steps:
            cand = z + dz
            if cand.min() < 0:
                rejected += 1
                if rejected > cfg.max_rejections:
                    raise BrownianStallError(f"{rejected} consecutive rejected Brownian steps")
                continue
            rejected = 0
            z = cand
            out[k] = z
            k += 1
            if k == cfg.n_points:
                break
    return out
