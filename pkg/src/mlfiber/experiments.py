"""Drivers for the sampler comparisons: MMD against a reference chain, and coverage sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .benchmarks import FiberInstance
from .core import chi_square_statistic, fit_expected_table
from .metrics import ReferenceMMD, fcs_sweep
from .samplers import (
    BrownianConfig,
    ChainConfig,
    LevelSchedule,
    StepSizeSampler,
    UniformWalk,
    brownian_points,
    child_seed,
    run_chain,
    run_level_samples,
)

DEFAULT_N_VALUES = tuple(range(500, 10_001, 500))
FCS_SAMPLERS = ("ds", "ds-inverted", "multilevel")
_DS_MODES = {"ds": "hypergeometric", "ds-inverted": "inverted"}


def mcmc_sample(inst: FiberInstance, n: int, seed: int) -> np.ndarray:
    """``n`` states of the accept-all multiplier-1 walk from the instance start."""
    cfg = ChainConfig(inst.moves, inst.start, n, seed)
    return run_chain(cfg, UniformWalk(inst.moves, 1)).states


def ds_sample(inst: FiberInstance, n: int, seed: int, mode: str = "hypergeometric") -> np.ndarray:
    cfg = ChainConfig(inst.moves, inst.start, n, seed)
    return run_chain(cfg, StepSizeSampler(inst.moves, mode)).states


def multilevel_sample(inst: FiberInstance, n: int, seed: int, schedule: LevelSchedule | None = None) -> np.ndarray:
    """Pooled states of all level chains, level sizes in the schedule's proportions summing to ``n``."""
    schedule = (schedule or LevelSchedule.halving()).scaled_to(n)
    cfg = ChainConfig(inst.moves, inst.start, 1, seed)
    return run_level_samples(schedule, cfg, keep_states=True).pooled_states()


def _to_space(states: np.ndarray, space: str, stat) -> np.ndarray:
    if space == "points":
        return states
    return np.array([stat(s) for s in states.tolist()])[:, None]


# -- MMD ------------------------------------------------------------------------

@dataclass(frozen=True)
class MMDRow:
    n: int
    trial: int
    mmd2: float
    method: str


_worker_state: dict = {}


def _mmd_task(args):
    inst, n, trial, method, seed, schedule, space = args
    ref, stat = _worker_state["ref"], _worker_state["stat"]
    s = child_seed(seed, "mmd", method, n, trial)
    if method == "mcmc":
        states = mcmc_sample(inst, n, s)
    else:
        states = multilevel_sample(inst, n, s, schedule)
    return MMDRow(n, trial, ref(_to_space(states, space, stat)), method)


def _init_mmd_worker(ref, stat):
    _worker_state["ref"] = ref
    _worker_state["stat"] = stat


def mmd_experiment(inst: FiberInstance, seed: int, reference_size: int = 100_000,
                   n_values: Sequence[int] = DEFAULT_N_VALUES, trials: int = 30,
                   schedule: LevelSchedule | None = None, space: str = "points",
                   threads: int = 1) -> list[MMDRow]:
    """Squared MMD of fresh MCMC and multilevel samples against one long reference chain.

    ``space`` is ``"points"`` (fiber points) or ``"statistic"`` (chi-square
    values). Rows are sorted by ``(n, trial, method)``.
    """
    if space not in ("points", "statistic"):
        raise ValueError(f"unknown space {space!r}")
    stat = chi_square_statistic(fit_expected_table(inst.A, inst.b)) if space == "statistic" else None
    ref_states = mcmc_sample(inst, reference_size, child_seed(seed, "reference"))
    ref = ReferenceMMD(_to_space(ref_states, space, stat))
    tasks = [(inst, n, t, m, seed, schedule, space)
             for n in n_values for t in range(trials) for m in ("mcmc", "multilevel")]
    if threads > 1:
        with ProcessPoolExecutor(threads, initializer=_init_mmd_worker, initargs=(ref, stat)) as pool:
            rows = list(pool.map(_mmd_task, tasks))
    else:
        _init_mmd_worker(ref, stat)
        rows = [_mmd_task(t) for t in tasks]
    return sorted(rows, key=lambda r: (r.n, r.trial, r.method))


# -- Fiber Coverage Score ---------------------------------------------------------

@dataclass(frozen=True)
class FCSRow:
    r: float
    K: int
    H_K: float
    method: str


def brownian_candidates(inst: FiberInstance, n_points: int, seed: int, sigma: float = 1.0,
                        step_dt: float = 0.1) -> np.ndarray:
    cfg = BrownianConfig(inst.lattice_basis, inst.start, n_points, child_seed(seed, "centers"),
                         sigma=sigma, step_dt=step_dt)
    return brownian_points(cfg)


def default_radii(candidates: np.ndarray, count: int = 8) -> list[float]:
    """Geometric radii from half the candidate spread down by a factor of 20."""
    spread = float(np.max(np.linalg.norm(candidates - candidates[0], axis=1)))
    if spread == 0:
        return [0.0]
    return [float(v) for v in np.geomspace(spread / 2, spread / 40, count)]


def sampler_states(inst: FiberInstance, method: str, n: int, seed: int,
                   schedule: LevelSchedule | None = None) -> np.ndarray:
    if method in _DS_MODES:
        return ds_sample(inst, n, seed, _DS_MODES[method])
    if method == "multilevel":
        return multilevel_sample(inst, n, seed, schedule)
    if method == "mcmc":
        return mcmc_sample(inst, n, seed)
    raise ValueError(f"unknown sampler {method!r}")


def _fcs_task(args):
    inst, method, run, n, seed, schedule, candidates, radii = args
    states = sampler_states(inst, method, n, child_seed(seed, "fcs", method, run), schedule)
    return method, run, fcs_sweep(states, candidates, radii)


def fcs_experiment(inst: FiberInstance, seed: int, candidates: np.ndarray, radii: Sequence[float],
                   samplers: Sequence[str] = FCS_SAMPLERS, sample_size: int = 10_000, runs: int = 10,
                   schedule: LevelSchedule | None = None, threads: int = 1) -> list[FCSRow]:
    """Coverage sweep per sampler over shared centers, ``H_K`` averaged over ``runs``.

    Rows come out sampler by sampler in the given order, radii decreasing.
    """
    tasks = [(inst, m, run, sample_size, seed, schedule, candidates, list(radii))
             for m in samplers for run in range(runs)]
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            results = list(pool.map(_fcs_task, tasks))
    else:
        results = [_fcs_task(t) for t in tasks]
    rows = []
    for m in samplers:
        sweeps = [sw for method, _, sw in results if method == m]
        for k, r in enumerate(radii):
            K = sweeps[0][k][1]
            h = math.fsum(sw[k][2] for sw in sweeps) / len(sweeps)
            rows.append(FCSRow(float(r), K, h, m))
    return rows
