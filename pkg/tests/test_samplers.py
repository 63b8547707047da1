import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlfiber import benchmarks as bm
from mlfiber.core import in_fiber
from mlfiber.moves import MoveBasis
from mlfiber.samplers import (
    BrownianConfig,
    BrownianStallError,
    ChainConfig,
    LevelSchedule,
    LevelStarvationWarning,
    StepSizeSampler,
    UnboundedRangeError,
    UniformWalk,
    brownian_points,
    child_seed,
    derive_rng,
    ds_step,
    feasible_step_range,
    run_chain,
    run_level_samples,
    step_log_weights,
    uniform_walk_step,
)

U = (10, 0, 0, 2, 0, 3, 0, 40, 10, 0, 2, 0, 0, 3, 40, 0)
M = (1, -1, 0, 0, -1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
TWO = bm.two_way((1, 1), (1, 1))


# -- feasible range and weights ------------------------------------------------------

def test_feasible_range_examples():
    assert feasible_step_range((1, 0, 0, 1), (1, -1, -1, 1)) == (-1, 0)
    assert feasible_step_range(U, M) == (-3, 0)


def test_unbounded_range():
    with pytest.raises(UnboundedRangeError):
        feasible_step_range((1, 1), (1, 0))
    with pytest.raises(UnboundedRangeError):
        StepSizeSampler(MoveBasis.from_vectors([(1, 2)]))


@given(st.lists(st.tuples(st.integers(0, 8), st.integers(-3, 3)), min_size=2, max_size=6))
def test_feasible_range_exact(pairs):
    g = [a for a, _ in pairs]
    f = [b for _, b in pairs]
    if not (any(v > 0 for v in f) and any(v < 0 for v in f)):
        return
    lo, hi = feasible_step_range(g, f)
    ok = lambda j: all(a + j * b >= 0 for a, b in zip(g, f))
    assert lo <= 0 <= hi
    assert all(ok(j) for j in range(lo, hi + 1))
    assert not ok(lo - 1) and not ok(hi + 1)


def test_step_weights_two_by_two():
    for mode in ("hypergeometric", "inverted", "uniform"):
        jmin, logw = step_log_weights((1, 0, 0, 1), (1, -1, -1, 1), mode)
        assert jmin == -1
        np.testing.assert_allclose(np.exp(logw - logw.max()), [1.0, 1.0])


def test_step_weights_hypergeometric_values():
    g, f = (2, 0, 0, 2), (1, -1, -1, 1)
    jmin, logw = step_log_weights(g, f, "hypergeometric")
    # j = -2, -1, 0 give tables (0,2,2,0), (1,1,1,1), (2,0,0,2)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    np.testing.assert_allclose(p, np.array([1 / 4, 1, 1 / 4]) / 1.5, rtol=1e-12)
    _, logw = step_log_weights(g, f, "inverted")
    p = np.exp(logw - logw.max())
    p /= p.sum()
    np.testing.assert_allclose(p, np.array([4, 1, 4]) / 9, rtol=1e-12)


def test_log_weights_do_not_overflow():
    g = (400, 0, 0, 400)
    _, logw = step_log_weights(g, (1, -1, -1, 1), "inverted")
    assert np.all(np.isfinite(logw))


# -- single steps ------------------------------------------------------------------------

def test_ds_step_two_by_two_is_fair():
    rng = derive_rng(1, "t")
    hits = sum(ds_step((1, 0, 0, 1), TWO.markov_basis, "hypergeometric", rng) == (0, 1, 1, 0)
               for _ in range(4000))
    assert abs(hits / 4000 - 0.5) < 0.03


def test_ds_step_singleton_range():
    B = MoveBasis.from_vectors([(1, -1, 0)])
    rng = derive_rng(0)
    assert ds_step((0, 0, 5), B, "hypergeometric", rng) == (0, 0, 5)


def test_uniform_step_infeasible_holds():
    rng = derive_rng(3)
    for _ in range(20):
        assert uniform_walk_step((0, 1, 0, 0, 1, 0), bm.hemmecke(1).lattice_basis, 2, rng) == (0, 1, 0, 0, 1, 0)


def test_uniform_step_interior_always_moves():
    g = (5, 5, 5, 5)
    rng = derive_rng(4)
    for _ in range(50):
        h = uniform_walk_step(g, TWO.markov_basis, 1, rng)
        assert h in ((6, 4, 4, 6), (4, 6, 6, 4))


def test_uniform_walk_rejects_bad_multiplier():
    with pytest.raises(ValueError):
        UniformWalk(TWO.markov_basis, 0)


@pytest.mark.parametrize("k", [1, 5])
def test_hemmecke_scaled_moves_all_infeasible(k):
    inst = bm.hemmecke(k)
    for mult in (2, 3, 4):
        walk = UniformWalk(inst.lattice_basis, mult)
        for mv, sign in itertools.product(range(len(inst.lattice_basis)), (0, 1)):
            g = list(inst.start)
            assert not walk.advance(g, mv, sign)
            assert tuple(g) == inst.start


@given(st.lists(st.sampled_from([-1, 0, 1]), min_size=4, max_size=8), st.lists(st.integers(0, 1), min_size=8, max_size=8))
def test_starvation_property(f, g):
    # start with max entry 1 and a +-1 move of mixed sign (as every kernel move of a
    # fiber with bounded polytope is): every multiple of 2 or more leaves the orthant
    if not (1 in f and -1 in f):
        return
    g = g[:len(f)]
    B = MoveBasis.from_vectors([f])
    for mult in (2, 3):
        for sign in (0, 1):
            state = list(g)
            UniformWalk(B, mult).advance(state, 0, sign)
            assert state == g


# -- chains ------------------------------------------------------------------------------

def test_chain_one_step():
    cfg = ChainConfig(TWO.markov_basis, (1, 0, 0, 1), 1, 5)
    rec = run_chain(cfg, UniformWalk(TWO.markov_basis))
    assert rec.states.shape == (1, 4)


def test_chain_record_every_and_burn_in():
    cfg = ChainConfig(TWO.markov_basis, (1, 0, 0, 1), 10, 5, record_every=3, burn_in=4)
    rec = run_chain(cfg, UniformWalk(TWO.markov_basis))
    assert len(rec) == 3 and rec.steps == 14
    full = run_chain(ChainConfig(TWO.markov_basis, (1, 0, 0, 1), 14, 5), UniformWalk(TWO.markov_basis))
    np.testing.assert_array_equal(rec.states, full.states[[6, 9, 12]])


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(TWO.markov_basis, (1, 0, 0, 1), 0, 1)
    with pytest.raises(ValueError):
        ChainConfig(TWO.markov_basis, (1, 0, 0, 1), 1, 1, record_every=0)
    with pytest.raises(ValueError):
        ChainConfig(TWO.markov_basis, (-1, 0, 0, 1), 1, 1)


@pytest.mark.parametrize("make", [lambda B: UniformWalk(B), lambda B: StepSizeSampler(B, "hypergeometric"),
                                  lambda B: StepSizeSampler(B, "inverted")])
def test_chain_determinism_and_margins(make):
    inst = bm.jobsat_4x4()
    cfg = ChainConfig(inst.markov_basis, inst.start, 2000, 77)
    check = lambda x: in_fiber(inst.A, inst.b, x)
    a = run_chain(cfg, make(inst.markov_basis), check=check)
    b = run_chain(cfg, make(inst.markov_basis))
    np.testing.assert_array_equal(a.states, b.states)
    assert a.accepted == b.accepted > 0
    c = run_chain(ChainConfig(inst.markov_basis, inst.start, 2000, 78), make(inst.markov_basis))
    assert not np.array_equal(a.states, c.states)


def test_uniform_walk_two_point_frequencies():
    cfg = ChainConfig(TWO.markov_basis, (1, 0, 0, 1), 100_000, 2024)
    rec = run_chain(cfg, UniformWalk(TWO.markov_basis))
    frac = np.mean(rec.states[:, 0] == 1)
    assert 0.49 <= frac <= 0.51


def test_step_sampler_hypergeometric_three_point():
    # margins (2, 2)/(2, 2): weights 1/4, 1, 1/4 on the three tables
    inst = bm.two_way((2, 2), (2, 2))
    cfg = ChainConfig(inst.markov_basis, inst.start, 60_000, 9)
    rec = run_chain(cfg, StepSizeSampler(inst.markov_basis))
    freq = np.bincount(rec.states[:, 0], minlength=3) / len(rec)
    np.testing.assert_allclose(freq, [1 / 6, 2 / 3, 1 / 6], atol=0.01)


# -- seeding ------------------------------------------------------------------------------

def test_seed_streams():
    a = derive_rng(5, "level", 1).random(3)
    assert np.array_equal(a, derive_rng(5, "level", 1).random(3))
    assert not np.array_equal(a, derive_rng(5, "level", 2).random(3))
    assert not np.array_equal(a, derive_rng(6, "level", 1).random(3))
    assert child_seed(2**64 - 1, "x") == child_seed(2**64 - 1, "x")
    assert 0 <= child_seed(1, "y") < 2**63


# -- level samples ----------------------------------------------------------------------------

def test_schedule_halving():
    s = LevelSchedule.halving()
    assert s.multipliers == (4, 3, 2, 1)
    assert s.samples_per_level == (100_000, 50_000, 25_000, 12_500)


@pytest.mark.parametrize("m, n", [((2, 2, 1), (1, 1, 1)), ((3, 2), (1, 1)), ((2, 1), (1, 0)), ((), ())])
def test_schedule_validation(m, n):
    with pytest.raises(ValueError):
        LevelSchedule(m, n)


def test_schedule_scaled_to_minimum():
    assert LevelSchedule.halving().scaled_to(4).samples_per_level == (1, 1, 1, 1)
    with pytest.raises(ValueError):
        LevelSchedule.halving().scaled_to(3)


@given(st.integers(15, 50_000))
def test_schedule_scaled_to(total):
    s = LevelSchedule.halving().scaled_to(total)
    assert s.total == total
    assert all(v >= 1 for v in s.samples_per_level)
    want = np.array([8, 4, 2, 1]) / 15 * total
    assert np.all(np.abs(np.array(s.samples_per_level) - want) <= 1)


def test_single_level():
    inst = bm.jobsat_4x4()
    cfg = ChainConfig(inst.markov_basis, inst.start, 1, 3)
    ls = run_level_samples(LevelSchedule((1,), (50,)), cfg, lambda x: float(sum(x)))
    assert ls.n_levels == 1 and ls.Z == [None]
    assert len(ls.Y[0]) == 50


def test_level_coupling_draws_from_previous_level():
    inst = bm.jobsat_4x4()
    stat = lambda x: float(x[0] * 100 + x[5])
    cfg = ChainConfig(inst.markov_basis, inst.start, 1, 3)
    ls = run_level_samples(LevelSchedule((3, 2, 1), (300, 200, 100)), cfg, stat)
    for l in (1, 2):
        assert len(ls.Z[l]) == len(ls.Y[l])
        assert set(ls.Z[l]) <= set(ls.Y[l - 1])
    assert ls.pooled_states().shape == (600, 16)
    again = run_level_samples(LevelSchedule((3, 2, 1), (300, 200, 100)), cfg, stat)
    for a, b in zip(ls.Y, again.Y):
        np.testing.assert_array_equal(a, b)


def test_level_uses_its_multiplier():
    inst = bm.jobsat_4x4()
    cfg = ChainConfig(inst.markov_basis, inst.start, 1, 8)
    ls = run_level_samples(LevelSchedule((3, 1), (200, 10)), cfg)
    steps = np.diff(np.vstack([inst.start, ls.states[0]]), axis=0)
    nz = np.abs(steps[np.any(steps, axis=1)])
    assert len(nz) and set(np.unique(nz)) <= {0, 3}


def test_hemmecke_starvation_warning():
    inst = bm.hemmecke(1)
    cfg = ChainConfig(inst.lattice_basis, inst.start, 1, 0)
    with pytest.warns(LevelStarvationWarning, match="level 1"):
        ls = run_level_samples(LevelSchedule((2, 1), (100, 100)), cfg)
    assert ls.accepted[0] == 0 and ls.accepted[1] > 0
    assert len(ls.warnings) == 1
    assert np.all(ls.states[0] == inst.start)


# -- Brownian centers -------------------------------------------------------------------------

def test_brownian_sigma_zero():
    inst = bm.jobsat_4x4()
    P = brownian_points(BrownianConfig(inst.lattice_basis, inst.start, 20, 1, sigma=0.0))
    assert np.all(P == np.array(inst.start, dtype=float))


def test_brownian_points_in_polytope():
    inst = bm.jobsat_4x4()
    P = brownian_points(BrownianConfig(inst.lattice_basis, inst.start, 3000, 2))
    A = inst.A.to_numpy(float)
    assert np.max(np.abs(P @ A.T - np.array(inst.b))) <= 1e-6
    assert P.min() >= 0
    assert len(np.unique(P, axis=0)) > 100
    again = brownian_points(BrownianConfig(inst.lattice_basis, inst.start, 3000, 2))
    np.testing.assert_array_equal(P, again)


def test_brownian_two_by_two_segment():
    P = brownian_points(BrownianConfig(TWO.lattice_basis, (1, 0, 0, 1), 500, 4, sigma=0.5))
    t = P[:, 0]
    np.testing.assert_allclose(P, np.outer(t, [1, -1, -1, 1]) + np.array([0, 1, 1, 0]), atol=1e-12)
    assert np.all((t >= 0) & (t <= 1))


def test_brownian_stall():
    inst = bm.hemmecke(1)
    with pytest.raises(BrownianStallError):
        brownian_points(BrownianConfig(inst.lattice_basis, inst.start, 10, 0, sigma=100.0, max_rejections=50))


def test_brownian_needs_lattice_basis():
    with pytest.raises(ValueError):
        BrownianConfig(TWO.markov_basis, (1, 0, 0, 1), 5, 0)
