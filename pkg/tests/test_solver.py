import warnings

import numpy as np
import pytest

from ergojump import fixtures as fx
from ergojump.grid import Grid, PolicyField, ValueField
from ergojump.model import ControlSpace, build_linear_1d
from ergojump.solver import (
    Discretization,
    SolverError,
    default_alphas,
    discretize_generator,
    extract_policy,
    greedy,
    policy_evaluate,
    solve_discounted_dirichlet,
    solve_ergodic_pi,
    truncation_sweep,
    vanishing_discount,
)

from conftest import simple_model


def const_cost(k):
    return lambda x, u: np.full(np.shape(x)[:-1], float(k))


# --- discretization ------------------------------------------------------------


def test_clamp_rows_annihilate_constants(vmodel):
    g = Grid(2, 3.0, 13)
    for u in (0, 4, 8):
        G = discretize_generator(vmodel, g, u)
        np.testing.assert_allclose(G.matrix @ np.ones(g.size), 0.0, atol=1e-9)
        assert np.all(G.outflow == 0)


def test_laplacian_stencil_exact_on_quadratics():
    m = build_linear_1d([{"drift": [0.0, 0.0], "cost": [0.0, 0.0]}], sigma=1.0)  # a = 1/2
    g = Grid(1, 1.0, 11)
    A = discretize_generator(m, g, 0).matrix.toarray()
    h = g.spacing
    i = 5
    np.testing.assert_allclose(A[i, i - 1:i + 2], np.array([0.5, -1.0, 0.5]) / h**2)
    x2 = g.nodes[:, 0] ** 2
    np.testing.assert_allclose((A @ x2)[g.interior], 1.0, rtol=1e-12)


def test_grid_aligned_atom_row_by_hand():
    g = Grid(1, 2.0, 21)
    h = g.spacing
    z, w = 2 * h, 0.3
    # drift equal to the mean jump, so the compensated drift is 0
    m = build_linear_1d([{"drift": [w * z, 0.0], "cost": [0.0, 0.0]}], sigma=1.0, atoms=[[z, w]])
    A = discretize_generator(m, g, 0).matrix.toarray()
    i = 8
    row = np.zeros(g.size)
    row[i - 1] += 0.5 / h**2
    row[i + 1] += 0.5 / h**2
    row[i] += -1.0 / h**2 - w
    row[i + 2] += w
    np.testing.assert_allclose(A[i], row, atol=1e-12)


def test_dirichlet_mode_reports_outflow():
    m = build_linear_1d([{"drift": [0.0, 0.0], "cost": [0.0, 0.0]}], sigma=1.0, atoms=[[0.5, 1.0]])
    g = Grid(1, 1.0, 11)
    G = discretize_generator(m, g, 0, boundary="dirichlet")
    total = G.matrix @ np.ones(g.size) + G.outflow
    np.testing.assert_allclose(total, 0.0, atol=1e-9)
    assert G.outflow[-1] > 0 and G.outflow[g.origin_index] == 0


def test_rejects_jumps_longer_than_box():
    m = build_linear_1d([{"drift": [0.0, 0.0], "cost": [0.0, 0.0]}], sigma=1.0, atoms=[[5.0, 1.0]])
    with pytest.raises(ValueError, match="box"):
        Discretization(m, Grid(1, 1.0, 5))


def test_monotonicity_warning_for_strong_correlation():
    sig = np.array([[1.0, 0.0], [3.0, 0.1]])  # a_11 < |a_12|
    m = simple_model(d=2)
    from dataclasses import replace
    from ergojump.model import constant_diffusion

    m = replace(m, diffusion=constant_diffusion(sig))
    with pytest.warns(RuntimeWarning, match="monotone"):
        G = discretize_generator(m, Grid(2, 1.0, 5), 0)
    assert not G.monotone


# --- discounted Dirichlet problem ---------------------------------------------


def test_zero_cost_gives_zero_value():
    m = build_linear_1d([{"drift": [0.0, -1.0], "cost": [0.0, 0.0]}], 1.0)
    V, _, info = solve_discounted_dirichlet(m, Grid(1, 3.0, 31), 0.5)
    assert np.all(V.values == 0) and info["converged"]


def test_unit_cost_against_dense_oracle():
    g = Grid(1, 2.0, 21)
    h, n, alpha = g.spacing, g.n, 0.3
    z, w = 2 * h, 0.5
    m = build_linear_1d([{"drift": [w * z, 0.0], "cost": [1.0, 0.0]}], sigma=1.0, atoms=[[z, w]])
    V, _, _ = solve_discounted_dirichlet(m, g, alpha)
    # independent dense assembly: a = 1/2, compensated drift 0, zero outside
    M = np.zeros((n, n))
    for i in range(n):
        M[i, i] = alpha + 1.0 / h**2 + w
        if i > 0:
            M[i, i - 1] -= 0.5 / h**2
        if i < n - 1:
            M[i, i + 1] -= 0.5 / h**2
        if i + 2 < n:
            M[i, i + 2] -= w
    want = np.linalg.solve(M, np.ones(n))
    np.testing.assert_allclose(V.values, want, rtol=1e-10)
    assert np.all(V.values > 0) and np.all(V.values < 1 / alpha)


def test_dirichlet_value_nonnegative(vmodel):
    V, pol, info = solve_discounted_dirichlet(vmodel, Grid(2, 3.0, 25), 0.2)
    assert V.values.min() >= 0
    assert info["monotone"]


def test_discounted_rejects_bad_alpha(ou):
    with pytest.raises(ValueError, match="alpha"):
        solve_discounted_dirichlet(ou, Grid(1, 2.0, 5), -0.1)
    with pytest.raises(ValueError, match="alpha"):
        solve_discounted_dirichlet(ou, Grid(1, 2.0, 5), 1.5)


# --- ergodic problems ---------------------------------------------------------


def test_constant_cost_ergodic():
    m = simple_model(d=1, sigma=1.0, drift=lambda x, u: -x, cost=const_cost(2.5))
    g = Grid(1, 4.0, 41)
    r = solve_ergodic_pi(m, g)
    assert r.rho_star == pytest.approx(2.5, abs=1e-12)
    np.testing.assert_allclose(r.value.values, 0.0, atol=1e-10)
    assert r.value.at_origin() == 0.0
    vd = vanishing_discount(m, g, alphas=[0.5, 0.25, 0.1])
    np.testing.assert_allclose(vd.diagnostics["rho_hat"], 2.5, rtol=1e-12)


def test_uncontrolled_pi_matches_vd(ou):
    g = Grid(1, 8.0, 81)
    pi = solve_ergodic_pi(ou, g)
    assert pi.iterations == 1
    vd = vanishing_discount(ou, g)
    assert abs(pi.rho_star - vd.rho_star) < 1e-2 * (1 + pi.rho_star)


def test_dominated_action_chosen_everywhere():
    # identical dynamics; action 1 costs more
    acts = [{"drift": [0.0, -1.0], "cost": [0.0, 1.0]}, {"drift": [0.0, -1.0], "cost": [0.3, 1.0]}]
    m = build_linear_1d(acts, 1.0, fx.OU_ATOMS)
    r = solve_ergodic_pi(m, Grid(1, 6.0, 61))
    assert np.all(r.policy.indices == 0)


def test_policy_evaluation_dominates_optimum():
    m = fx.two_action_model()
    g = Grid(1, 6.0, 61)
    r = solve_ergodic_pi(m, g)
    rng = np.random.default_rng(0)
    for _ in range(5):
        pol = PolicyField(g, rng.integers(0, 2, g.size))
        rho, _ = policy_evaluate(m, g, pol)
        assert rho >= r.rho_star - 1e-9


def test_pi_rho_sequence_nonincreasing(v_pi):
    hist = v_pi.diagnostics["rho_history"]
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_pi_residual_and_fixed_point(vmodel, vgrid, v_pi):
    assert v_pi.residual < 10 * 1e-8
    pol = extract_policy(vmodel, vgrid, v_pi.value)
    np.testing.assert_array_equal(pol.indices, v_pi.policy.indices)


def test_extract_policy_invariances(vmodel):
    g = Grid(2, 2.0, 9)
    zero = ValueField(g, np.zeros(g.size))
    p0 = extract_policy(vmodel, g, zero)
    c = vmodel.cost(g.nodes[:, None, :], vmodel.controls.points[None])
    np.testing.assert_array_equal(p0.indices, greedy(c))
    V = ValueField(g, np.random.default_rng(1).normal(size=g.size))
    a = extract_policy(vmodel, g, V)
    b = extract_policy(vmodel, g, ValueField(g, V.values + 7.0))
    np.testing.assert_array_equal(a.indices, b.indices)
    from dataclasses import replace

    scaled = replace(vmodel, cost=lambda x, u: 3.0 * vmodel.cost(x, u))
    np.testing.assert_array_equal(extract_policy(scaled, g, zero).indices, p0.indices)


def test_greedy_tie_break_lowest_index():
    Q = np.array([[1.0, 1.0, 2.0], [3.0, 2.0, 2.0], [0.0, -1.0, -1.0 + 1e-14]])
    np.testing.assert_array_equal(greedy(Q), [0, 1, 1])
    allowed = np.array([[False, True, True]] * 3)
    np.testing.assert_array_equal(greedy(Q, allowed), [1, 1, 1])


def test_refinement_trend(ou):
    rhos = [solve_ergodic_pi(ou, Grid(1, 8.0, n)).rho_star for n in (41, 81, 161)]
    d1, d2 = abs(rhos[1] - rhos[0]), abs(rhos[2] - rhos[1])
    assert d2 < d1


def test_unusable_policy_reports_singular_system():
    # no diffusion, no jumps, zero drift: every node is absorbing
    m = simple_model(d=1, sigma=0.0)
    with pytest.raises(SolverError, match="unichain"):
        policy_evaluate(m, Grid(1, 1.0, 5), 0)


def test_default_alphas():
    a = default_alphas()
    assert a[0] == 0.5 and a[-1] <= 1e-3 and len(a) == 10
    assert all(y < x for x, y in zip(a, a[1:]))


def test_vd_rejects_bad_schedule(ou):
    with pytest.raises(ValueError):
        vanishing_discount(ou, Grid(1, 2.0, 5), alphas=[0.1, 0.2])


# --- truncation --------------------------------------------------------------


def test_fully_frozen_sweep_point(vmodel):
    g = Grid(2, 4.0, 33)
    sw = truncation_sweep(vmodel, g, [0.0, 1.0], fx.V_ABANDONING)
    rho_v, _ = policy_evaluate(vmodel, g, fx.V_ABANDONING)
    assert sw.values[0] == pytest.approx(rho_v, abs=1e-10)
    assert sw.outer_rho == pytest.approx(rho_v, abs=1e-12)
    assert sw.values[1] <= sw.values[0] + 1e-10


def test_sweep_validates_radii(vmodel):
    g = Grid(2, 2.0, 9)
    with pytest.raises(ValueError):
        truncation_sweep(vmodel, g, [2.0, 1.0], 0)
    with pytest.raises(ValueError):
        truncation_sweep(vmodel, g, [1.0, 3.0], 0)
