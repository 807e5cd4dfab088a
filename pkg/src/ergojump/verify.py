"""Pass/fail checks tying solver output, simulation and drift inequalities together.

Every check returns a :class:`VerificationReport` whose ``passed`` flag is a
pure function of ``measured`` and ``thresholds``. Tolerances live in
:data:`TOLERANCES` and are echoed into each report.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import Grid
from .model import LyapunovSpec, ModelSpec, check_lyapunov
from .sim import estimate_ergodic_cost
from .solver import ErgodicSolveResult, TruncationSweepResult

TOLERANCES = {
    "perturbation_slack": 1e-6,
    "sim_se_multiplier": 3.0,
    "sim_relative_allowance": 0.05,
    "sweep_monotone_slack": 1e-8,
    "sweep_final_relative": 1e-2,
    "lyapunov_shell_violation": 0.0,
}


def digest(payload) -> str:
    """sha256 of a canonical JSON rendering (arrays become lists, floats are repr'd)."""
    return hashlib.sha256(json.dumps(_plain(payload), sort_keys=True).encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return repr(v) if not math.isfinite(v) else v
    return obj


@dataclass
class VerificationReport:
    name: str
    inputs_digest: str
    measured: dict
    thresholds: dict
    passed: bool
    narrative: str
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.narrative}"

    def to_dict(self) -> dict:
        """Serializable view; ``extra`` (in-memory detail) is left out."""
        return _plain({"name": self.name, "inputs_digest": self.inputs_digest, "measured": self.measured,
                       "thresholds": self.thresholds, "passed": self.passed, "narrative": self.narrative})


# --------------------------------------------------------------------------
# pass rules (pure functions of measured + thresholds)


def _perturbation_rule(m: dict, t: dict) -> bool:
    return m["gap_lower"] >= -t["slack"] and m["gap_upper"] >= -t["slack"]


def _sim_rule(m: dict, t: dict) -> bool:
    return m["abs_error"] <= t["se_multiplier"] * m["std_error"] + t["relative_allowance"] * (1.0 + m["rho_star"])


def _sweep_rule(m: dict, t: dict) -> bool:
    return m["max_increase"] <= t["monotone_slack"] and m["final_gap"] <= t["final_relative"] * (1.0 + m["rho_eps_star"])


def _assumption_rule(m: dict, t: dict) -> bool:
    return all(v <= t["shell_violation"] for v in m["shell_violation_fraction"].values())


# --------------------------------------------------------------------------
# checks


def check_perturbation_bound(rho_star: float, rho_eps_star: float, epsilon: float,
                             kappa_tilde: float) -> VerificationReport:
    """``rho* <= rho_eps* <= rho* + eps kappa (1 + 2 rho*)`` up to a fixed slack."""
    vals = [rho_star, rho_eps_star, epsilon, kappa_tilde]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("perturbation bound inputs must be finite")
    if not 0 <= epsilon < 1.0 / kappa_tilde:
        raise ValueError(f"epsilon={epsilon} outside [0, 1/kappa_tilde)")
    upper = rho_star + epsilon * kappa_tilde * (1.0 + 2.0 * rho_star)
    measured = {"rho_star": rho_star, "rho_eps_star": rho_eps_star, "epsilon": epsilon, "kappa_tilde": kappa_tilde,
                "upper": upper, "gap_lower": rho_eps_star - rho_star, "gap_upper": upper - rho_eps_star}
    thr = {"slack": TOLERANCES["perturbation_slack"]}
    ok = _perturbation_rule(measured, thr)
    narrative = (f"rho*={rho_star:.6g} <= rho_eps={rho_eps_star:.6g} <= {upper:.6g} "
                 f"(signed gaps {measured['gap_lower']:+.3g}, {measured['gap_upper']:+.3g})")
    return VerificationReport("perturbation_bound", digest(vals), measured, thr, ok, narrative)


def cross_validate_policy(model: ModelSpec, result: ErgodicSolveResult, sim_params: dict,
                          policy=None) -> VerificationReport:
    """Simulate the solver's policy (or ``policy``) and compare the long-run cost with ``rho*``.

    ``sim_params`` holds ``T``, ``burn_in``, ``h`` and optionally ``seed``,
    ``replications`` and ``x0``.
    """
    p = {"seed": 0, "replications": 10, "x0": None, **sim_params}
    pol = result.policy if policy is None else policy
    est = estimate_ergodic_cost(model, pol, p["T"], p["burn_in"], p["h"], seed=p["seed"],
                                replications=p["replications"], x0=p["x0"])
    measured = {"rho_star": result.rho_star, "rho_sim": est.point_estimate, "std_error": est.std_error,
                "abs_error": abs(est.point_estimate - result.rho_star), "failures": est.failures}
    thr = {"se_multiplier": TOLERANCES["sim_se_multiplier"],
           "relative_allowance": TOLERANCES["sim_relative_allowance"]}
    ok = _sim_rule(measured, thr)
    narrative = (f"simulated {est.point_estimate:.5g} +- {est.std_error:.2g} vs rho*={result.rho_star:.5g}, "
                 f"allowed {thr['se_multiplier'] * est.std_error + thr['relative_allowance'] * (1 + result.rho_star):.3g}")
    pol_idx = pol.indices if hasattr(pol, "indices") else pol
    dig = digest({"model": model.name, "rho": result.rho_star, "policy": np.asarray(pol_idx), "sim": p})
    return VerificationReport("cross_validate_policy", dig, measured, thr, ok, narrative)


def check_truncation_convergence(sweep: TruncationSweepResult, rho_eps_star: float,
                                 epsilon_margin: float | None = None) -> VerificationReport:
    """Nonincreasing sweep values with the last one close to the unrestricted optimum.

    Also reports the smallest radius whose value is within ``epsilon_margin``
    (default: the sweep's epsilon, or the final tolerance when that is 0) of
    ``rho_eps_star``.
    """
    vals = np.asarray(sweep.values, dtype=float)
    if vals.size == 0:
        raise ValueError("empty sweep")
    inc = float(np.max(np.diff(vals))) if vals.size > 1 else -np.inf
    margin = epsilon_margin
    if margin is None:
        margin = sweep.epsilon if sweep.epsilon > 0 else TOLERANCES["sweep_final_relative"] * (1 + rho_eps_star)
    hit = [R for R, v in zip(sweep.radii, vals) if v <= rho_eps_star + margin]
    measured = {"radii": list(sweep.radii), "values": vals.tolist(), "rho_eps_star": rho_eps_star,
                "max_increase": inc, "final_gap": abs(float(vals[-1]) - rho_eps_star),
                "margin": margin, "smallest_radius_within_margin": hit[0] if hit else None}
    thr = {"monotone_slack": TOLERANCES["sweep_monotone_slack"],
           "final_relative": TOLERANCES["sweep_final_relative"]}
    ok = _sweep_rule(measured, thr)
    narrative = (f"{len(vals)} radii, max increase {inc:.3g}, final gap {measured['final_gap']:.3g}, "
                 f"margin reached at R={measured['smallest_radius_within_margin']}")
    dig = digest({"radii": sweep.radii, "values": vals, "rho": rho_eps_star, "eps": sweep.epsilon})
    return VerificationReport("truncation_convergence", dig, measured, thr, ok, narrative)


@dataclass
class LyapunovCheckSpec:
    """One drift inequality to scan.

    ``form="penalty"`` needs ``F`` (and optionally ``delta``); it is checked
    for all controls unless ``control`` is given. ``form="stabilizing"`` needs the
    stabilizing ``control`` and ``kappa_hat``.
    """

    lyap: LyapunovSpec
    form: str
    control: object = None
    F: Callable | None = None
    kappa_hat: float = 1.0
    ball_radius: float = 1.0
    delta: float = 0.1
    label: str = ""


def check_assumptions(model: ModelSpec, specs: Sequence[LyapunovCheckSpec], grid: Grid,
                      shell_frac: float = 0.75) -> VerificationReport:
    """Pass iff every scanned inequality holds at all nodes with ``|x| >= shell_frac * R``.

    The stabilization radius (largest violating ``|x|``) is reported for each.
    """
    shell, radius, frac, reps = {}, {}, {}, {}
    for i, s in enumerate(specs):
        key = s.label or f"{s.form}#{i}"
        rep = check_lyapunov(model, s.lyap, grid, s.control, form=s.form, ball_radius=s.ball_radius,
                             kappa_hat=s.kappa_hat, F=s.F, delta=s.delta, shell_frac=shell_frac)
        shell[key] = rep.shell_violation_fraction
        radius[key] = rep.stabilization_radius
        frac[key] = rep.violation_fraction
        reps[key] = rep
    measured = {"shell_violation_fraction": shell, "stabilization_radius": radius, "violation_fraction": frac,
                "shell_inner_radius": shell_frac * grid.R}
    thr = {"shell_violation": TOLERANCES["lyapunov_shell_violation"]}
    ok = _assumption_rule(measured, thr)
    parts = ", ".join(f"{k}: r_stab={radius[k]:.3g} shell={shell[k]:.3g}" for k in shell)
    dig = digest({"model": model.name, "grid": [grid.d, grid.R, grid.n],
                  "specs": [[s.form, np.asarray(s.lyap.Q), s.lyap.k, s.lyap.scale, s.kappa_hat, s.ball_radius,
                             s.delta, str(s.control)] for s in specs]})
    return VerificationReport("assumptions", dig, measured, thr, ok, parts, {"reports": reps})


# --------------------------------------------------------------------------
# aggregate output


def reports_to_json(reports: Sequence[VerificationReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def reports_to_text(reports: Sequence[VerificationReport]) -> str:
    return "".join(r.line() + "\n" for r in reports)
