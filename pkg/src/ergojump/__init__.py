"""Ergodic and discounted control of diffusions with compound Poisson jumps.

Finite-difference HJB solvers, an Euler-Maruyama simulator with compensated
jumps, Foster-Lyapunov drift scans and cross-checks between them.
"""

from .grid import Grid, PolicyField, ValueField
from .model import (
    ControlSpace,
    JumpMeasure,
    LyapunovSpec,
    ModelError,
    ModelSpec,
    NetworkParams,
    PerturbedCostSpec,
    SpecFieldError,
    build_linear_1d,
    build_v_model,
    build_w_model,
    check_lyapunov,
    eval_generator,
    make_perturbation,
    quadratic,
)
from .sim import (
    empirical_measure,
    estimate_ergodic_cost,
    simulate_path,
    weak_generator_check,
    window_averages,
    with_outer_control,
)
from .solver import (
    ErgodicSolveResult,
    TruncationSweepResult,
    discretize_generator,
    extract_policy,
    policy_evaluate,
    solve_discounted_dirichlet,
    solve_ergodic_pi,
    truncation_sweep,
    vanishing_discount,
)
from .verify import (
    VerificationReport,
    check_assumptions,
    check_perturbation_bound,
    check_truncation_convergence,
    cross_validate_policy,
)

__version__ = "0.1.0"
