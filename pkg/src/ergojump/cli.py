"""Command-line front end.

    ergojump <command> --config run.json [--out DIR] [--threads N] [--seed S]

Commands: solve-discounted, solve-ergodic, simulate, sweep, verify.
Exit codes: 0 success, 1 config error, 2 nonconvergence, 3 verification failure.

A run manifest (``manifest.json``) holds the fully resolved config, so
``--config manifest.json`` reproduces the run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import (
    ConfigError,
    ModelConfig,
    RunConfig,
    build_grid,
    build_model,
    parse_config,
    require,
    resolved_model_params,
)
from .grid import Grid
from .io import atomic_write_text, write_field, write_histogram, write_json, write_sweep, write_trajectory
from .model import LyapunovSpec, ModelError, make_perturbation, power_penalty
from .sim import SimulationError, empirical_measure, estimate_ergodic_cost, simulate_path, with_outer_control
from .solver import (
    NonConvergenceWarning,
    SolverError,
    solve_discounted_dirichlet,
    solve_ergodic_pi,
    truncation_sweep,
    vanishing_discount,
)
from .verify import (
    LyapunovCheckSpec,
    check_assumptions,
    check_perturbation_bound,
    check_truncation_convergence,
    cross_validate_policy,
    reports_to_json,
    reports_to_text,
)

log = logging.getLogger("ergojump")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_VERIFY = 0, 1, 2, 3


class _Run:
    """Resolved config plus the model/grid built from it."""

    def __init__(self, cfg: RunConfig, command: str, threads: int | None, base_dir: Path):
        params = resolved_model_params(cfg.model, base_dir)
        # inline the parameters so the manifest stands alone
        self.cfg = dataclasses.replace(cfg, model=ModelConfig(cfg.model.builder, params, None))
        self.command = command
        self.threads = threads
        self.model = build_model(self.cfg.model)
        self.grid = build_grid(cfg.grid, self.model.d) if cfg.grid is not None else None
        self.out = Path(cfg.out)
        self.outputs: list[str] = []

    def perturbation(self, epsilon: float, field_name: str = "solver.epsilon"):
        """``(f_tilde, kappa_tilde)`` for ``epsilon > 0``; ``(None, None)`` otherwise."""
        if epsilon == 0:
            return None, None
        s = self.cfg.solver
        F = power_penalty(s.penalty_C, self.model.growth_degree)
        try:
            spec = make_perturbation(self.model, self.grid, epsilon, F, delta=s.delta, ball_radius=s.ball_radius)
        except ModelError as exc:
            raise ConfigError(field_name, str(exc)) from None
        return spec.f_tilde, spec.kappa_tilde

    def write(self, name: str, writer, *args):
        writer(self.out / name, *args)
        self.outputs.append(name)

    def manifest(self, results: dict, exit_code: int) -> None:
        m = {
            "command": self.command,
            "config": self.cfg.to_dict(),
            "package": {"name": "ergojump", "version": __version__},
            "threads": self.threads,
            "results": results,
            "outputs": sorted(self.outputs),
            "exit_code": exit_code,
        }
        write_json(self.out / "manifest.json", m)


def _solve_ergodic(run: _Run, epsilon: float, f_tilde):
    s = run.cfg.solver
    if s.method == "vd":
        return vanishing_discount(run.model, run.grid, s.alphas, epsilon, s.tol, max(s.max_iter, 1),
                                  f_tilde=f_tilde, scheme=s.scheme)
    return solve_ergodic_pi(run.model, run.grid, epsilon, s.tol, s.max_iter, f_tilde=f_tilde, scheme=s.scheme)


def _ergodic_summary(res) -> dict:
    out = res.summary()
    diag = res.diagnostics
    for key in ("rho_hat", "increments", "rho_history", "oscillation", "nonconvergence"):
        if key in diag:
            out[key] = diag[key]
    return out


# --------------------------------------------------------------------------
# commands


def cmd_solve_discounted(run: _Run) -> int:
    require(run.cfg, "grid")
    s = run.cfg.solver
    f_tilde, kappa = run.perturbation(s.epsilon)
    V, pol, info = solve_discounted_dirichlet(run.model, run.grid, s.alpha, s.epsilon, s.tol, s.max_iter,
                                              f_tilde=f_tilde, scheme=s.scheme, boundary=s.boundary or "dirichlet")
    run.write("value.csv", write_field, V, pol)
    code = EXIT_OK if info["converged"] else EXIT_NONCONVERGED
    run.manifest({**info, "kappa_tilde": kappa, "value_at_origin": V.at_origin(),
                  "value_max": float(V.values.max())}, code)
    return code


def cmd_solve_ergodic(run: _Run) -> int:
    require(run.cfg, "grid")
    s = run.cfg.solver
    f_tilde, kappa = run.perturbation(s.epsilon)
    res = _solve_ergodic(run, s.epsilon, f_tilde)
    run.write("value.csv", write_field, res.value, res.policy)
    code = EXIT_OK if res.converged else EXIT_NONCONVERGED
    run.manifest({**_ergodic_summary(res), "epsilon": s.epsilon, "kappa_tilde": kappa}, code)
    return code


def cmd_simulate(run: _Run) -> int:
    require(run.cfg, "sim")
    sc = run.cfg.sim
    results = {}
    if sc.policy == "optimal":
        require(run.cfg, "grid")
        res = _solve_ergodic(run, 0.0, None)
        policy = res.policy
        if sc.outer_control is not None:
            if sc.outer_control >= len(run.model.controls):
                raise ConfigError("sim.outer_control", f"control index {sc.outer_control} out of range")
            policy = with_outer_control(res.policy, sc.outer_control)
        results["rho_star"] = res.rho_star
        results["solver_converged"] = res.converged
    else:
        if sc.policy >= len(run.model.controls):
            raise ConfigError("sim.policy", f"control index {sc.policy} out of range")
        policy = int(sc.policy)
    x0 = np.zeros(run.model.d) if sc.x0 is None else np.asarray(sc.x0, dtype=float)
    if x0.shape != (run.model.d,):
        raise ConfigError("sim.x0", f"expected {run.model.d} coordinates")
    traj = simulate_path(run.model, policy, x0, sc.T, sc.h, seed=sc.seed)
    run.write("trajectory.csv", write_trajectory, traj.thinned(sc.record_every))
    hist_grid = run.grid if run.grid is not None else Grid(run.model.d, 8.0, 33)
    hist = empirical_measure(traj, hist_grid)
    run.write("histogram.csv", write_histogram, hist)
    est = estimate_ergodic_cost(run.model, policy, sc.T, sc.burn_in, sc.h, seed=sc.seed,
                                replications=sc.replications, x0=x0)
    results.update({"estimate": est.summary(), "escaped_mass": hist.escaped_mass, "jump_count": traj.jump_count,
                    "final_cost_integral": float(traj.cost_integral[-1]),
                    "histogram_grid": {"R": hist_grid.R, "n": hist_grid.n}})
    code = EXIT_OK if est.failures == 0 else EXIT_NONCONVERGED
    run.manifest(results, code)
    return code


def cmd_sweep(run: _Run) -> int:
    require(run.cfg, "grid", "sweep")
    s, sw = run.cfg.solver, run.cfg.sweep
    if sw.outer_control >= len(run.model.controls):
        raise ConfigError("sweep.outer_control", f"control index {sw.outer_control} out of range")
    if sw.radii[-1] > run.grid.R:
        raise ConfigError("sweep.radii", f"largest radius exceeds the box radius {run.grid.R}")
    f_tilde, kappa = run.perturbation(s.epsilon)
    res = truncation_sweep(run.model, run.grid, sw.radii, sw.outer_control, s.epsilon, s.tol, s.max_iter,
                           f_tilde=f_tilde, scheme=s.scheme)
    run.write("sweep.csv", write_sweep, res)
    ok = all(r.converged for r in res.results)
    code = EXIT_OK if ok else EXIT_NONCONVERGED
    run.manifest({"radii": res.radii, "values": res.values, "outer_control": res.outer_control,
                  "outer_rho": res.outer_rho, "epsilon": s.epsilon, "kappa_tilde": kappa,
                  "iterations": [r.iterations for r in res.results]}, code)
    return code


def cmd_verify(run: _Run) -> int:
    require(run.cfg, "grid", "verify")
    vc, s = run.cfg.verify, run.cfg.solver
    base = _solve_ergodic(run, 0.0, None)
    reports = []
    for check in vc.checks:
        if check == "perturbation":
            eps = vc.perturbation_epsilon
            f_tilde, kappa = run.perturbation(eps, "verify.perturbation_epsilon")
            res_eps = _solve_ergodic(run, eps, f_tilde)
            reports.append(check_perturbation_bound(base.rho_star, res_eps.rho_star, eps, kappa))
        elif check == "cross_validation":
            require(run.cfg, "sim")
            sc = run.cfg.sim
            reports.append(cross_validate_policy(run.model, base, {"T": sc.T, "burn_in": sc.burn_in, "h": sc.h,
                                                                   "seed": sc.seed, "replications": sc.replications,
                                                                   "x0": sc.x0}))
        elif check == "truncation":
            require(run.cfg, "sweep")
            sw = run.cfg.sweep
            res = truncation_sweep(run.model, run.grid, sw.radii, sw.outer_control, 0.0, s.tol, s.max_iter,
                                   scheme=s.scheme)
            reports.append(check_truncation_convergence(res, base.rho_star))
        elif check == "assumptions":
            lc = vc.lyapunov
            lg = build_grid(vc.lyapunov_grid, run.model.d) if vc.lyapunov_grid is not None else run.grid
            try:
                lyap = LyapunovSpec(np.asarray(lc.Q, dtype=float), lc.k, lc.scale)
            except ModelError as exc:
                raise ConfigError("verify.lyapunov.Q", str(exc)) from None
            F = power_penalty(lc.penalty_C, run.model.growth_degree)
            specs = [
                LyapunovCheckSpec(LyapunovSpec(lyap.Q, 1.0, 1.0), "penalty", None, F, ball_radius=lc.ball_radius,
                                  delta=lc.delta, label="penalty"),
                LyapunovCheckSpec(lyap, "stabilizing", lc.control, kappa_hat=lc.kappa_hat, ball_radius=lc.ball_radius,
                                  label="stabilizing"),
            ]
            reports.append(check_assumptions(run.model, specs, lg))
    atomic_write_text(run.out / "reports.json", reports_to_json(reports))
    atomic_write_text(run.out / "summary.txt", reports_to_text(reports))
    run.outputs += ["reports.json", "summary.txt"]
    sys.stdout.write(reports_to_text(reports))
    code = EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY
    run.manifest({"rho_star": base.rho_star, "passed": [r.passed for r in reports],
                  "checks": [r.name for r in reports]}, code)
    return code


COMMANDS = {
    "solve-discounted": cmd_solve_discounted,
    "solve-ergodic": cmd_solve_ergodic,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config (or a previous manifest.json)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    common.add_argument("--seed", type=int, help="override sim.seed")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="ergojump", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "solve-ergodic":
            sp.add_argument("--method", choices=["pi", "vd"], help="override solver.method")
    return p


def _load(path: str) -> tuple[RunConfig, Path]:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    if isinstance(data, dict) and "command" in data and "config" in data:
        data = data["config"]  # a manifest from an earlier run
    if not isinstance(data, dict):
        raise ConfigError("<file>", "top level must be an object")
    return parse_config(data), p.parent


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, base = _load(args.config)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out=args.out)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be nonnegative")
            if cfg.sim is not None:
                cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, seed=args.seed))
        if getattr(args, "method", None):
            cfg = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, method=args.method))
        run = _Run(cfg, args.command, args.threads, base)
        with threadpool_limits(limits=args.threads), warnings.catch_warnings():
            warnings.simplefilter("always", NonConvergenceWarning)
            return COMMANDS[args.command](run)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
