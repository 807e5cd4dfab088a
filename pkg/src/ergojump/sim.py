"""Euler-Maruyama simulation of controlled jump diffusions.

One step from ``x`` under control ``u``::

    x + b(x,u) h + sigma(x) sqrt(h) xi - h m + J

where ``m = sum_i w_i z_i`` and ``J = z_i`` with probability ``h w_i`` (no jump
with probability ``1 - nu h``). A single uniform draw decides both whether a
jump fires and which atom. Replication ``r`` uses the stream ``seed + r``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, PolicyField
from .model import ModelSpec, TestFunction, eval_generator

log = logging.getLogger(__name__)

CHUNK = 4096


class SimulationError(RuntimeError):
    def __init__(self, t: float, state: np.ndarray):
        self.t, self.state = t, np.asarray(state)
        super().__init__(f"non-finite state at t={t:.6g}: {self.state.tolist()}")


def resolve_policy(model: ModelSpec, policy):
    """Map a policy description to ``f(X) -> control indices``.

    Accepts a :class:`PolicyField` (nearest-node lookup, clamped to the box),
    an integer control index, or a callable.
    """
    K = len(model.controls)
    if isinstance(policy, PolicyField):
        policy.validate(K)
        return lambda X: policy.indices[policy.grid.nearest(X)]
    if callable(policy):
        return policy
    if np.ndim(policy) == 0:
        k = int(policy)
        if not 0 <= k < K:
            raise ValueError(f"control index {k} out of range [0, {K})")
        return lambda X: np.full(X.shape[0], k, dtype=np.int64)
    k = model.controls.index_of(policy)
    return lambda X: np.full(X.shape[0], k, dtype=np.int64)


def with_outer_control(policy: PolicyField, outer_control: int):
    """``policy`` inside its grid box and the fixed ``outer_control`` outside it.

    A policy solved on a reflecting box can pick a control near the edge that
    is only harmless because of the reflection; freezing a stabilizing control
    off the box keeps the closed loop recurrent.
    """
    R, k = policy.grid.R, int(outer_control)

    def f(X):
        inside = np.all(np.abs(X) <= R, axis=1)
        return np.where(inside, policy.indices[policy.grid.nearest(X)], k)

    return f


def _check_step(model: ModelSpec, h: float) -> None:
    if not h > 0:
        raise ValueError(f"time step must be positive, got {h}")
    nuh = model.jumps.total_mass * h
    if nuh >= 1:
        raise ValueError(f"jump probability per step nu*h={nuh:.3g} must be < 1")
    if nuh >= 0.1:
        warnings.warn(f"nu*h={nuh:.3g} >= 0.1; the one-jump-per-step approximation is coarse", RuntimeWarning)


def euler_step(model: ModelSpec, x: np.ndarray, u: np.ndarray, h: float, xi: np.ndarray,
               unif: np.ndarray) -> np.ndarray:
    """Advance states ``x`` of shape ``(R, d)`` by one step."""
    J = model.jumps
    dx = (model.drift(x, u) - J.mean_jump) * h
    dx = dx + np.sqrt(h) * np.einsum("rij,rj->ri", model.diffusion(x), xi)
    if len(J):
        fire = unif < J.total_mass * h
        if fire.any():
            atom = np.searchsorted(np.cumsum(J.weights), unif[fire] / h, side="right")
            atom = np.minimum(atom, len(J) - 1)
            dx[fire] += J.atoms[atom]
    return x + dx


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    cost_integral: np.ndarray
    jump_count: int
    jump_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def thinned(self, every: int) -> "Trajectory":
        """Every ``every``-th record (the last record is always kept)."""
        idx = np.arange(0, len(self.times), int(every))
        if idx[-1] != len(self.times) - 1:
            idx = np.append(idx, len(self.times) - 1)
        return Trajectory(self.times[idx], self.states[idx], self.controls[idx], self.cost_integral[idx],
                          self.jump_count, self.jump_steps // int(every))

    def concat(self, other: "Trajectory") -> "Trajectory":
        """Append ``other`` after this path (time-shifted, costs accumulated).

        At the junction time the state and control are those of ``other``.
        """
        t = np.concatenate([self.times, other.times[1:] + self.times[-1] - other.times[0]])
        return Trajectory(
            t,
            np.concatenate([self.states[:-1], other.states]),
            np.concatenate([self.controls[:-1], other.controls]),
            np.concatenate([self.cost_integral, other.cost_integral[1:] - other.cost_integral[0] + self.cost_integral[-1]]),
            self.jump_count + other.jump_count,
            np.concatenate([self.jump_steps, other.jump_steps + len(self.times) - 1]),
        )


def _run(model: ModelSpec, policy, x0, T: float, h: float, seeds: list[int], checkpoints=(),
         record_every: int = 0, raise_on_failure: bool = True):
    """Simulate ``len(seeds)`` independent replications side by side."""
    _check_step(model, h)
    if not T >= h:
        raise ValueError(f"horizon T={T} must be at least one step h={h}")
    n_steps = int(round(T / h))
    h = T / n_steps
    pol = resolve_policy(model, policy)
    R, d = len(seeds), model.d
    X = np.tile(np.asarray(x0, dtype=float).reshape(1, d), (R, 1))
    U = model.controls.points
    C = np.zeros(R)
    alive = np.ones(R, dtype=bool)
    fail = [None] * R
    jumps = np.zeros(R, dtype=np.int64)
    ck_steps = [int(round(t / h)) for t in checkpoints]
    ck_at: dict[int, list[int]] = {}
    for q, s in enumerate(ck_steps):
        ck_at.setdefault(s, []).append(q)
    ck_vals = np.zeros((len(ck_steps), R))
    rngs = [np.random.default_rng(s) for s in seeds]
    nuh = model.jumps.total_mass * h
    rec = None
    if record_every:
        n_rec = n_steps // record_every + 1
        rec = {"x": np.empty((n_rec, R, d)), "k": np.empty((n_rec, R), dtype=np.int64),
               "c": np.empty((n_rec, R)), "t": np.empty(n_rec), "jumps": [[] for _ in range(R)]}
    for c0 in range(0, n_steps, CHUNK):
        m = min(CHUNK, n_steps - c0)
        xi = np.stack([g.standard_normal((m, d)) for g in rngs], axis=1)
        un = np.stack([g.random(m) for g in rngs], axis=1)
        for j in range(m):
            step = c0 + j
            for q in ck_at.get(step, ()):
                ck_vals[q] = C
            k = pol(X)
            u = U[k]
            if rec is not None and step % record_every == 0:
                r = step // record_every
                rec["x"][r], rec["k"][r], rec["c"][r], rec["t"][r] = X, k, C, step * h
            C = C + np.where(alive, model.cost(X, u) * h, 0.0)
            Xn = euler_step(model, X, u, h, xi[j], un[j])
            fired = un[j] < nuh
            jumps += fired & alive
            if rec is not None:
                for r_ in np.flatnonzero(fired & alive):
                    rec["jumps"][r_].append(step)
            bad = alive & ~np.all(np.isfinite(Xn), axis=1)
            if bad.any():
                for r_ in np.flatnonzero(bad):
                    fail[r_] = ((step + 1) * h, X[r_].copy())
                    if raise_on_failure:
                        raise SimulationError(*fail[r_])
                alive &= ~bad
            X = np.where(alive[:, None], Xn, X)
    for q, s in enumerate(ck_steps):
        if s >= n_steps:
            ck_vals[q] = C
    if rec is not None and n_steps % record_every == 0:
        r = n_steps // record_every
        rec["x"][r], rec["k"][r], rec["c"][r], rec["t"][r] = X, pol(X), C, n_steps * h
    return {"X": X, "C": C, "alive": alive, "fail": fail, "jumps": jumps, "checkpoints": ck_vals,
            "record": rec, "h": h, "n_steps": n_steps}


def simulate_path(model: ModelSpec, policy, x0, T: float, h: float, seed: int = 0,
                  record_every: int = 1) -> Trajectory:
    """Simulate one path; raises :class:`SimulationError` on a non-finite state."""
    out = _run(model, policy, x0, T, h, [seed], record_every=max(1, int(record_every)))
    rec = out["record"]
    js = np.asarray(rec["jumps"][0], dtype=np.int64)
    return Trajectory(rec["t"].copy(), rec["x"][:, 0].copy(), rec["k"][:, 0].copy(), rec["c"][:, 0].copy(),
                      int(out["jumps"][0]), js)


# --------------------------------------------------------------------------
# generator consistency


@dataclass
class WeakCheckReport:
    h: float
    delta: float
    std_error: float
    estimate: float
    generator: float
    n_samples: int
    method: str


def weak_generator_check(model: ModelSpec, fn: TestFunction, x, u, h: float, n_samples: int = 100_000,
                         seed: int = 0, method: str = "conditional") -> WeakCheckReport:
    """One-step discrepancy ``(E phi(X_h) - phi(x))/h - A_u phi(x)`` with its standard error.

    ``u`` is a control point or an index into ``model.controls``.

    ``method="plain"`` samples the full step. ``method="conditional"`` samples
    antithetic Gaussian pairs and averages over the jump outcome exactly, using
    the same step map and jump probabilities as the simulator.
    """
    _check_step(model, h)
    x = np.asarray(x, dtype=float).reshape(1, model.d)
    if isinstance(u, (int, np.integer)):
        u = model.controls.points[int(u)]
    u = np.asarray(u, dtype=float)
    rng = np.random.default_rng(seed)
    phi0 = float(fn.value(x[0]))
    gen = float(eval_generator(model, fn, x[0], u))
    J = model.jumps
    if method == "plain":
        xi = rng.standard_normal((n_samples, model.d))
        un = rng.random(n_samples)
        X = np.broadcast_to(x, (n_samples, model.d))
        vals = fn.value(euler_step(model, X, np.broadcast_to(u, (n_samples, u.size)), h, xi, un))
    elif method == "conditional":
        half = max(1, n_samples // 2)
        xi = rng.standard_normal((half, model.d))
        X = np.broadcast_to(x, (half, model.d))
        ub = np.broadcast_to(u, (half, u.size))
        cw = np.cumsum(J.weights)
        nuh = J.total_mass * h
        vals = np.zeros(half)
        for sgn in (1.0, -1.0):
            no_jump = np.ones(half)
            v = (1.0 - nuh) * fn.value(euler_step(model, X, ub, h, sgn * xi, no_jump))
            for i, w in enumerate(J.weights):
                pick = np.full(half, h * (cw[i] - 0.5 * w))
                v = v + h * w * fn.value(euler_step(model, X, ub, h, sgn * xi, pick))
            vals += 0.5 * v
    else:
        raise ValueError(f"unknown method {method!r}")
    est = (vals.mean() - phi0) / h
    se = vals.std(ddof=1) / np.sqrt(len(vals)) / h if len(vals) > 1 else 0.0
    return WeakCheckReport(h, float(est - gen), float(se), float(est), gen, n_samples, method)


# --------------------------------------------------------------------------
# ergodic estimates


@dataclass
class ErgodicEstimate:
    point_estimate: float
    std_error: float
    replications: int
    horizon: float
    burn_in: float
    failures: int = 0
    per_replication: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def summary(self) -> dict:
        return {"point_estimate": self.point_estimate, "std_error": self.std_error,
                "replications": self.replications, "horizon": self.horizon, "burn_in": self.burn_in,
                "failures": self.failures}


def window_averages(model: ModelSpec, policy, windows, h: float, seed: int = 0, replications: int = 1,
                    x0=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-replication time averages of the cost over each ``(t0, t1)`` window.

    All windows are read off the same paths. Returns ``(averages, alive)``
    with ``averages`` of shape ``(len(windows), replications)``.
    """
    windows = [(float(a), float(b)) for a, b in windows]
    for a, b in windows:
        if not b > a >= 0:
            raise ValueError(f"bad window ({a}, {b})")
    T = max(b for _, b in windows)
    x0 = np.zeros(model.d) if x0 is None else x0
    pts = sorted({t for w in windows for t in w})
    out = _run(model, policy, x0, T, h, [seed + r for r in range(replications)], pts, raise_on_failure=False)
    ck = dict(zip(pts, out["checkpoints"]))
    avgs = np.array([(ck[b] - ck[a]) / (b - a) for a, b in windows])
    return avgs, out["alive"]


def estimate_ergodic_cost(model: ModelSpec, policy, T: float, burn_in: float, h: float, seed: int = 0,
                          replications: int = 10, x0=None) -> ErgodicEstimate:
    """Mean over replications of the cost average on ``[burn_in, T]``."""
    if not T > burn_in >= 0:
        raise ValueError("need T > burn_in >= 0")
    avgs, alive = window_averages(model, policy, [(burn_in, T)], h, seed, replications, x0)
    vals = avgs[0][alive]
    n_fail = int((~alive).sum())
    if n_fail:
        warnings.warn(f"{n_fail} of {replications} replications aborted on non-finite states", RuntimeWarning)
    if len(vals) == 0:
        raise RuntimeError("every replication aborted")
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return ErgodicEstimate(float(vals.mean()), se, len(vals), float(T), float(burn_in), n_fail, vals)


# --------------------------------------------------------------------------
# empirical measures


@dataclass
class OccupationHistogram:
    """Fraction of time spent in each node-centred grid cell."""

    grid: Grid
    cell_masses: np.ndarray
    escaped_mass: float
    horizon: float

    @property
    def cell_centers(self) -> np.ndarray:
        return self.grid.nodes


def empirical_measure(traj: Trajectory, grid: Grid) -> OccupationHistogram:
    """Time-weighted occupancy of the piecewise-constant path (state marginal only)."""
    dt = np.diff(traj.times)
    T = float(dt.sum())
    if not T > 0:
        raise ValueError("trajectory horizon must be positive")
    X = traj.states[:-1]
    half = grid.R + grid.spacing / 2
    inside = np.all(np.abs(X) <= half, axis=1)
    masses = np.bincount(grid.nearest(X[inside]), weights=dt[inside], minlength=grid.size) / T
    escaped = float(dt[~inside].sum() / T)
    return OccupationHistogram(grid, masses, escaped, T)
