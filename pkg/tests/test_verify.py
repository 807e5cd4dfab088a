import json
import math

import numpy as np
import pytest

from ergojump import fixtures as fx
from ergojump.grid import Grid, PolicyField
from ergojump.model import LyapunovSpec, build_v_model, power_penalty
from ergojump.solver import TruncationSweepResult, solve_ergodic_pi
from ergojump.verify import (
    LyapunovCheckSpec,
    check_assumptions,
    check_perturbation_bound,
    check_truncation_convergence,
    cross_validate_policy,
    digest,
    reports_to_json,
    reports_to_text,
)


def sweep(values, eps=0.0):
    radii = list(range(len(values)))
    return TruncationSweepResult(radii, list(values), 0, eps, float(values[0]), [])


# --- perturbation bound -------------------------------------------------------


def test_zero_epsilon_equality_passes():
    r = check_perturbation_bound(2.0, 2.0, 0.0, 5.0)
    assert r.passed
    assert r.measured["gap_lower"] == 0 and r.measured["gap_upper"] == 0


def test_synthetic_violation_reports_signed_gap():
    r = check_perturbation_bound(1.0, 0.9, 0.01, 2.0)
    assert not r.passed
    assert r.measured["gap_lower"] == pytest.approx(-0.1)
    upper = 1.0 + 0.01 * 2.0 * 3.0
    r = check_perturbation_bound(1.0, upper + 0.5, 0.01, 2.0)
    assert not r.passed
    assert r.measured["gap_upper"] == pytest.approx(-0.5)
    assert r.line().startswith("FAIL perturbation_bound")


@pytest.mark.parametrize("args", [(1.0, math.nan, 0.1, 2.0), (1.0, 1.0, 0.6, 2.0), (1.0, 1.0, -0.1, 2.0)])
def test_perturbation_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        check_perturbation_bound(*args)


# --- truncation ----------------------------------------------------------------


def test_single_radius_sweep():
    r = check_truncation_convergence(sweep([3.0]), 3.0)
    assert r.passed and r.measured["smallest_radius_within_margin"] == 0


def test_increasing_sweep_fails():
    r = check_truncation_convergence(sweep([3.0, 2.5, 2.6, 2.0]), 2.0)
    assert not r.passed
    assert r.measured["max_increase"] == pytest.approx(0.1)


def test_sweep_far_from_optimum_fails():
    assert not check_truncation_convergence(sweep([3.0, 2.9]), 2.0).passed


def test_smallest_radius_within_margin():
    r = check_truncation_convergence(sweep([3.0, 2.2, 2.05, 2.0]), 2.0, epsilon_margin=0.1)
    assert r.passed and r.measured["smallest_radius_within_margin"] == 2


# --- cross validation ---------------------------------------------------------


@pytest.fixture(scope="module")
def two_action():
    m = fx.two_action_model()
    return m, solve_ergodic_pi(m, Grid(1, 8.0, 161))


def test_optimal_policy_cross_validates(two_action):
    m, res = two_action
    r = cross_validate_policy(m, res, {"T": 300.0, "burn_in": 20.0, "h": 0.01, "replications": 8})
    assert r.passed, r.narrative


def test_suboptimal_policy_is_caught(two_action):
    # always the expensive, strongly stabilizing action: long-run cost well above rho*
    m, res = two_action
    pol = PolicyField.constant(res.policy.grid, 1)
    r = cross_validate_policy(m, res, {"T": 300.0, "burn_in": 20.0, "h": 0.01, "replications": 8}, policy=pol)
    assert not r.passed
    assert r.measured["rho_sim"] > res.rho_star


def test_zero_cost_model(two_action):
    from dataclasses import replace

    m = replace(two_action[0], cost=lambda x, u: np.zeros(np.shape(x)[:-1]))
    res = solve_ergodic_pi(m, Grid(1, 4.0, 41))
    assert res.rho_star == pytest.approx(0.0, abs=1e-12)
    r = cross_validate_policy(m, res, {"T": 20.0, "burn_in": 5.0, "h": 0.01, "replications": 2})
    assert r.passed and r.measured["abs_error"] == 0.0


# --- assumptions -----------------------------------------------------------------


def test_assumptions_pass_and_negative_control():
    m = build_v_model(fx.v_params_abandon_all())
    g = Grid(2, 20.0, 41)
    good = [
        LyapunovCheckSpec(LyapunovSpec(np.array([5.0, 2.5]), 1.0), "penalty", F=power_penalty(1.0, 1.0), label="penalty"),
        LyapunovCheckSpec(LyapunovSpec(np.array([5.0, 2.5]), 2.0, 4.0), "stabilizing", control=fx.V_ABANDONING,
                          kappa_hat=5.0, label="stabilizing"),
    ]
    rep = check_assumptions(m, good, g)
    assert rep.passed, rep.narrative
    bad = [LyapunovCheckSpec(LyapunovSpec(np.array([5.0, 3.0]), 2.0, 4.0), "stabilizing", control=fx.V_TRANSIENT,
                             kappa_hat=5.0, label="transient")]
    rep = check_assumptions(fx.v_model(), bad, g)
    assert not rep.passed
    assert rep.measured["shell_violation_fraction"]["transient"] > 0.05


# --- reporting ------------------------------------------------------------------


def test_digest_is_deterministic_and_sensitive():
    a = digest({"x": np.array([1.0, 2.0]), "b": 1})
    assert a == digest({"b": 1, "x": [1.0, 2.0]})
    assert a != digest({"b": 1, "x": [1.0, 2.0 + 1e-15]})


def test_report_serialization():
    reps = [check_perturbation_bound(1.0, 1.01, 0.01, 2.0), check_truncation_convergence(sweep([2.0, 1.0]), 1.0)]
    data = json.loads(reports_to_json(reps))
    assert [d["name"] for d in data] == ["perturbation_bound", "truncation_convergence"]
    assert all("extra" not in d for d in data)
    txt = reports_to_text(reps).splitlines()
    assert txt[0].startswith("PASS perturbation_bound")
    assert len(txt) == 2
