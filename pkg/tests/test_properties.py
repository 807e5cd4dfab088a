from dataclasses import replace

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ergojump import fixtures as fx
from ergojump.grid import Grid
from ergojump.model import ControlSpace, JumpMeasure, eval_generator, quadratic
from ergojump.sim import empirical_measure, simulate_path
from ergojump.solver import greedy

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
VMODEL = fx.v_model()


def rand_quadratic(draw_vals):
    A = np.array(draw_vals[:4]).reshape(2, 2)
    return quadratic(A=A, p=np.array(draw_vals[4:6]), c0=draw_vals[6])


@given(st.lists(finite, min_size=7, max_size=7), st.lists(finite, min_size=7, max_size=7),
       finite, arrays(float, 2, elements=finite), st.integers(0, 8))
def test_generator_is_linear(v1, v2, c, x, u):
    f, g = rand_quadratic(v1), rand_quadratic(v2)
    up = VMODEL.controls.points[u]
    lhs = eval_generator(VMODEL, f + g * c, x, up)
    rhs = eval_generator(VMODEL, f, x, up) + c * eval_generator(VMODEL, g, x, up)
    scale = 1.0 + abs(eval_generator(VMODEL, f, x, up)) + abs(c * eval_generator(VMODEL, g, x, up))
    assert abs(lhs - rhs) <= 1e-10 * scale


@given(st.floats(0.01, 5.0), arrays(float, 2, elements=finite), st.integers(0, 8))
def test_jump_part_scales_with_rate(lam, x, u):
    fn = quadratic(A=np.array([[1.0, 0.3], [0.3, 2.0]]), p=np.array([0.5, -1.0]))
    up = VMODEL.controls.points[u]
    nojump = replace(VMODEL, jumps=JumpMeasure.empty(2))
    base = eval_generator(nojump, fn, x, up)
    one = eval_generator(VMODEL, fn, x, up) - base
    scaled = eval_generator(replace(VMODEL, jumps=VMODEL.jumps.scaled(lam)), fn, x, up) - base
    assert abs(scaled - lam * one) <= 1e-9 * (1.0 + abs(lam * one) + abs(base))


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.floats(0.5, 5.0), st.integers(0, 8))
def test_histogram_is_a_probability(seed, R, u):
    tr = simulate_path(VMODEL, u, np.zeros(2), 2.0, 0.01, seed=seed)
    h = empirical_measure(tr, Grid(2, R, 9))
    assert np.all(h.cell_masses >= 0) and 0 <= h.escaped_mass <= 1
    assert abs(h.cell_masses.sum() + h.escaped_mass - 1.0) <= 1e-12


@settings(max_examples=10)
@given(st.integers(0, 2**31), st.integers(0, 8))
def test_simulation_deterministic_in_seed(seed, u):
    a = simulate_path(VMODEL, u, np.ones(2), 1.0, 0.02, seed=seed)
    b = simulate_path(VMODEL, u, np.ones(2), 1.0, 0.02, seed=seed)
    assert np.array_equal(a.states, b.states) and a.jump_count == b.jump_count


@given(st.integers(1, 4), st.integers(1, 10))
def test_simplex_lattice(dim, n_u):
    cs = ControlSpace.simplex(dim, n_u)
    assert np.all(cs.points >= 0)
    np.testing.assert_allclose(cs.points.sum(axis=1), 1.0, atol=1e-12)
    assert len(np.unique(cs.points, axis=0)) == len(cs)
    i = int(len(cs) // 2)
    assert cs.index_of(cs.points[i]) == i


@given(arrays(float, (5, 4), elements=st.floats(-10, 10)), st.integers(0, 3))
def test_greedy_picks_lowest_minimiser(Q, j):
    Q = Q.copy()
    Q[:, j] = Q.min(axis=1)  # force a tie at column j
    idx = greedy(Q)
    assert np.all(Q[np.arange(5), idx] <= Q.min(axis=1) + 1e-12 * (1 + np.abs(Q.min(axis=1))))
    assert np.all(idx <= j)
