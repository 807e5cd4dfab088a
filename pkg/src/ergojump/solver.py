"""Finite-difference HJB solvers for controlled jump diffusions.

The local part of the generator uses central second differences (a sign-aware
seven-point stencil for mixed derivatives) and first differences that are
central where the stencil stays monotone and upwind elsewhere. The nonlocal
part sums multilinear interpolants at ``x + z_i``. Off-box targets are either
clamped to the nearest boundary node (``boundary="clamp"``, used for the
whole-space equations) or read as zero (``boundary="dirichlet"``).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, PolicyField, ValueField
from .model import ModelSpec, PerturbedCostSpec, default_f_tilde, perturbed_model

log = logging.getLogger(__name__)

BOUNDARY_MODES = ("clamp", "dirichlet")
SCHEMES = ("hybrid", "upwind")
TIE_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    pass


# --------------------------------------------------------------------------
# discretization


class Discretization:
    """Stencil data for one model on one grid, shared by all controls.

    ``Q(V)[n, k]`` is the discrete ``A_{u_k} V(x_n) + c(x_n, u_k)``; the
    operator for a policy is assembled by :meth:`matrix`.
    """

    def __init__(self, model: ModelSpec, grid: Grid, boundary: str = "clamp", scheme: str = "hybrid"):
        if boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if model.d != grid.d:
            raise ValueError("model and grid dimensions differ")
        if model.jumps.max_norm() > 2 * grid.R * np.sqrt(grid.d):
            raise ValueError("a jump atom is longer than the box diameter")
        self.model, self.grid = model, grid
        self.boundary, self.scheme = boundary, scheme
        N, d, h = grid.size, grid.d, grid.spacing
        self.N = N
        x = grid.nodes
        self.a = np.broadcast_to(model.a(x), (N, d, d)).copy()
        U = model.controls.points
        xb = np.broadcast_to(x[:, None, :], (N, len(U), d))
        ub = np.broadcast_to(U[None], (N, len(U), U.shape[1]))
        self.bt = np.asarray(model.compensated_drift(xb, ub), dtype=float)  # (N, K, d)
        self.cost = np.asarray(model.cost(xb, ub), dtype=float)  # (N, K)
        self.plus = [self._shift(_unit(d, i)) for i in range(d)]
        self.minus = [self._shift(-_unit(d, i)) for i in range(d)]
        self._static, self.static_outflow = self._build_static()
        self._drift_coeffs()

    @property
    def K(self) -> int:
        return self.cost.shape[1]

    # index helpers -------------------------------------------------------

    def _shift(self, offset: np.ndarray) -> np.ndarray:
        g = self.grid
        mi = g.multi_index + offset
        off = np.any((mi < 0) | (mi > g.n - 1), axis=1)
        mi = np.clip(mi, 0, g.n - 1)
        idx = g.flat(mi)
        if self.boundary == "dirichlet":
            idx = np.where(off, self.N, idx)
        return idx

    def _interp(self, targets: np.ndarray):
        """Multilinear interpolation stencils: ``(cols, weights)`` of shape ``(N, 2^d)``."""
        g = self.grid
        h, n = g.spacing, g.n
        f = (targets + g.R) / h
        i0 = np.floor(f).astype(np.int64)
        if self.boundary == "clamp":
            f = np.clip(f, 0.0, n - 1)
            i0 = np.minimum(np.floor(f).astype(np.int64), n - 2)
        # dirichlet: corners past the edge are dropped below (zero extension)
        t = f - i0
        cols, wts = [], []
        for corner in range(2 ** g.d):
            bits = np.array([(corner >> k) & 1 for k in range(g.d)])
            mi = i0 + bits
            w = np.prod(np.where(bits == 1, t, 1.0 - t), axis=1)
            off = np.any((mi < 0) | (mi > n - 1), axis=1)
            idx = g.flat(np.clip(mi, 0, n - 1))
            idx = np.where(off, self.N, idx)
            cols.append(idx)
            wts.append(np.where(off & (self.boundary == "clamp"), 0.0, w))
        return np.stack(cols, axis=1), np.stack(wts, axis=1)

    # assembly ------------------------------------------------------------

    def _build_static(self):
        """Diffusion plus nonlocal part (control independent)."""
        g, N, d, h = self.grid, self.N, self.grid.d, self.grid.spacing
        rows, cols, vals = [], [], []
        ar = np.arange(N)

        def add(c, v):
            rows.append(ar)
            cols.append(c)
            vals.append(v)

        for i in range(d):
            aii = self.a[:, i, i] / h**2
            add(self.plus[i], aii)
            add(self.minus[i], aii)
            add(ar, -2 * aii)
        for i in range(d):
            for j in range(i + 1, d):
                aij = self.a[:, i, j] / h**2
                if not np.any(aij):
                    continue
                pos, neg = np.maximum(aij, 0), np.maximum(-aij, 0)
                ei, ej = _unit(d, i), _unit(d, j)
                add(self._shift(ei + ej), pos)
                add(self._shift(-ei - ej), pos)
                add(self._shift(ei - ej), neg)
                add(self._shift(-ei + ej), neg)
                for k in (self.plus[i], self.minus[i], self.plus[j], self.minus[j]):
                    add(k, -np.abs(aij))
                add(ar, 2 * np.abs(aij))
        J = self.model.jumps
        for z, w in zip(J.atoms, J.weights):
            c, wt = self._interp(g.nodes + z)
            for k in range(c.shape[1]):
                add(c[:, k], w * wt[:, k])
        if len(J):
            add(ar, -J.total_mass * np.ones(N))
        return self._to_csr(rows, cols, vals)

    def _to_csr(self, rows, cols, vals):
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        out = c == self.N
        outflow = np.bincount(r[out], weights=v[out], minlength=self.N)
        keep = ~out & (v != 0)
        A = sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(self.N, self.N))
        A.sum_duplicates()
        return A, outflow

    def _drift_coeffs(self):
        """Per-axis coefficients on the forward/backward neighbours, shape ``(N, K)``."""
        h = self.grid.spacing
        d = self.grid.d
        self.cp, self.cm = [], []
        for i in range(d):
            b = self.bt[..., i]
            up_p, up_m = np.maximum(b, 0) / h, np.maximum(-b, 0) / h
            if self.scheme == "hybrid":
                offd = np.abs(self.a[:, i, :]).sum(axis=1) - np.abs(self.a[:, i, i])
                a_eff = (self.a[:, i, i] - offd)[:, None]
                central = np.abs(b) * h <= 2 * a_eff
                self.cp.append(np.where(central, b / (2 * h), up_p))
                self.cm.append(np.where(central, -b / (2 * h), up_m))
            else:
                self.cp.append(up_p)
                self.cm.append(up_m)

    def matrix(self, policy: np.ndarray) -> sp.csr_matrix:
        """Sparse generator for a per-node control index array."""
        policy = np.asarray(policy, dtype=np.int64)
        ar = np.arange(self.N)
        rows, cols, vals = [], [], []
        for i in range(self.grid.d):
            cp, cm = self.cp[i][ar, policy], self.cm[i][ar, policy]
            rows += [ar, ar, ar]
            cols += [self.plus[i], self.minus[i], ar]
            vals += [cp, cm, -(cp + cm)]
        D, _ = self._to_csr(rows, cols, vals)
        return (self._static + D).tocsr()

    def outflow(self, policy: np.ndarray) -> np.ndarray:
        """Coefficient mass per row that points off the box (zero in clamp mode)."""
        policy = np.asarray(policy, dtype=np.int64)
        out = self.static_outflow.copy()
        if self.boundary == "dirichlet":
            ar = np.arange(self.N)
            for i in range(self.grid.d):
                out += np.where(self.plus[i] == self.N, self.cp[i][ar, policy], 0.0)
                out += np.where(self.minus[i] == self.N, self.cm[i][ar, policy], 0.0)
        return out

    def apply_all(self, V: np.ndarray) -> np.ndarray:
        """``A_{u_k} V`` at every node for every control, shape ``(N, K)``."""
        V = np.asarray(V, dtype=float)
        Vp = np.append(V, 0.0)
        base = self._static @ V
        out = np.repeat(base[:, None], self.K, axis=1)
        for i in range(self.grid.d):
            out += self.cp[i] * (Vp[self.plus[i]] - V)[:, None]
            out += self.cm[i] * (Vp[self.minus[i]] - V)[:, None]
        return out

    def q_values(self, V: np.ndarray) -> np.ndarray:
        return self.apply_all(V) + self.cost

    def cost_of(self, policy: np.ndarray) -> np.ndarray:
        return self.cost[np.arange(self.N), policy]

    def is_monotone(self, policy: np.ndarray) -> bool:
        A = self.matrix(policy).tocoo()
        off = A.row != A.col
        return bool(np.all(A.data[off] >= -1e-12))


def _unit(d: int, i: int) -> np.ndarray:
    e = np.zeros(d, dtype=np.int64)
    e[i] = 1
    return e


@dataclass
class DiscreteGenerator:
    matrix: sp.csr_matrix
    outflow: np.ndarray
    boundary: str
    scheme: str
    monotone: bool


def _policy_array(model: ModelSpec, grid: Grid, u) -> np.ndarray:
    if isinstance(u, PolicyField):
        u.validate(len(model.controls))
        return u.indices
    if np.ndim(u) == 0:
        return np.full(grid.size, int(u), dtype=np.int64)
    return np.full(grid.size, model.controls.index_of(u), dtype=np.int64)


def discretize_generator(model: ModelSpec, grid: Grid, u, boundary: str = "clamp",
                         scheme: str = "hybrid") -> DiscreteGenerator:
    """Sparse discrete generator for a control index, control point, or policy."""
    disc = Discretization(model, grid, boundary, scheme)
    pol = _policy_array(model, grid, u)
    monotone = disc.is_monotone(pol)
    if not monotone:
        warnings.warn("discrete generator is not monotone: diffusion does not dominate cross terms", RuntimeWarning)
    return DiscreteGenerator(disc.matrix(pol), disc.outflow(pol), boundary, scheme, monotone)


# --------------------------------------------------------------------------
# linear algebra and greedy improvement


def _solve(A: sp.spmatrix, rhs: np.ndarray, what: str) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(A.tocsc(), rhs)
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise SolverError(f"{what}: singular linear system ({exc})") from None
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{what}: linear solve returned non-finite values")
    res = np.abs(A @ x - rhs).max()
    scale = 1.0 + np.abs(rhs).max() + np.abs(x).max()
    if res > 1e-8 * scale:
        cond = _cond_estimate(A)
        raise SolverError(f"{what}: residual {res:.3e} too large (condition estimate {cond:.3e})")
    return x


def _cond_estimate(A) -> float:
    try:
        return float(spla.onenormest(A) * spla.onenormest(spla.inv(A.tocsc())))
    except Exception:  # diagnostic only
        return float("nan")


def greedy(Q: np.ndarray, allowed: np.ndarray | None = None, rtol: float = TIE_RTOL) -> np.ndarray:
    """Per-row argmin; among near-ties the lowest index wins."""
    if allowed is not None:
        Q = np.where(allowed, Q, np.inf)
    qmin = Q.min(axis=1, keepdims=True)
    near = Q <= qmin + rtol * (1.0 + np.abs(qmin))
    return np.argmax(near, axis=1)


def _cost_model(model: ModelSpec, grid: Grid, epsilon: float, f_tilde: Callable | None) -> ModelSpec:
    if epsilon == 0:
        return model
    if f_tilde is None:
        f_tilde, _ = default_f_tilde(model, grid)
    return perturbed_model(model, PerturbedCostSpec(epsilon, f_tilde))


# --------------------------------------------------------------------------
# discounted problems


def _discounted_pi(disc: Discretization, alpha: float, tol: float, max_iter: int,
                   policy0: np.ndarray | None = None):
    N = disc.N
    I = sp.identity(N, format="csr")
    pol = greedy(disc.cost) if policy0 is None else np.asarray(policy0, dtype=np.int64)
    psi = None
    for it in range(1, max_iter + 1):
        new_psi = _solve(alpha * I - disc.matrix(pol), disc.cost_of(pol), f"discounted evaluation (alpha={alpha:g})")
        change = np.inf if psi is None else np.abs(new_psi - psi).max()
        psi = new_psi
        new_pol = greedy(disc.q_values(psi))
        if np.array_equal(new_pol, pol) or change < tol:
            return psi, pol, it, True
        pol = new_pol
    return psi, pol, max_iter, False


def solve_discounted_dirichlet(model: ModelSpec, grid: Grid, alpha: float, epsilon: float = 0.0, tol: float = 1e-8,
                               max_iter: int = 200, *, f_tilde: Callable | None = None,
                               scheme: str = "hybrid", boundary: str = "dirichlet") -> tuple[ValueField, PolicyField, dict]:
    """Discounted HJB on the box with zero exterior data, by policy iteration.

    ``boundary="clamp"`` solves the whole-space discounted equation instead.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    disc = Discretization(_cost_model(model, grid, epsilon, f_tilde), grid, boundary, scheme)
    psi, pol, iters, ok = _discounted_pi(disc, alpha, tol, max_iter)
    monotone = disc.is_monotone(pol)
    if not ok:
        if not monotone:
            raise SolverError("policy iteration diverged on a non-monotone stencil")
        warnings.warn(f"discounted policy iteration hit max_iter={max_iter}", NonConvergenceWarning)
    info = {"iterations": iters, "converged": ok, "monotone": monotone, "alpha": alpha, "epsilon": epsilon,
            "boundary": boundary}
    return ValueField(grid, psi), PolicyField(grid, pol), info


# --------------------------------------------------------------------------
# ergodic problems


@dataclass
class ErgodicSolveResult:
    rho_star: float
    value: ValueField
    policy: PolicyField
    residual: float
    iterations: int
    method: str
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"rho_star": self.rho_star, "residual": self.residual, "iterations": self.iterations,
                "method": self.method, "converged": self.converged}


def _evaluate(disc: Discretization, pol: np.ndarray) -> tuple[float, np.ndarray]:
    """Solve ``A_v h - rho = -c_v`` with ``h(origin) = 0``."""
    o = disc.grid.origin_index
    A = disc.matrix(pol).tocsc()
    col = sp.csc_matrix(-np.ones((disc.N, 1)))
    B = sp.hstack([A[:, :o], col, A[:, o + 1:]], format="csc")
    try:
        y = _solve(B, -disc.cost_of(pol), "ergodic policy evaluation")
    except SolverError as exc:
        raise SolverError(f"{exc}; the policy's chain is not unichain on the grid") from None
    rho = float(y[o])
    y[o] = 0.0
    return rho, y


def hjb_residual(disc: Discretization, V: np.ndarray, rho: float, allowed: np.ndarray | None = None) -> float:
    Q = disc.q_values(V)
    if allowed is not None:
        Q = np.where(allowed, Q, np.inf)
    return float(np.abs(Q.min(axis=1) - rho).max())


def _ergodic_pi(disc: Discretization, tol: float, max_iter: int, allowed=None, policy0=None):
    pol = greedy(disc.cost, allowed) if policy0 is None else np.asarray(policy0, dtype=np.int64)
    history = []
    ok = False
    for it in range(1, max_iter + 1):
        rho, h = _evaluate(disc, pol)
        history.append(rho)
        new_pol = greedy(disc.q_values(h), allowed)
        if np.array_equal(new_pol, pol):
            ok = True
            break
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol * 1e-3 and it >= 3:
            # only near-tie flips remain
            ok = True
            break
        pol = new_pol
    return rho, h, pol, it, ok, history


def solve_ergodic_pi(model: ModelSpec, grid: Grid, epsilon: float = 0.0, tol: float = 1e-8, max_iter: int = 100, *,
                     f_tilde: Callable | None = None, scheme: str = "hybrid",
                     policy0: PolicyField | None = None) -> ErgodicSolveResult:
    """Howard policy iteration for the ergodic HJB with clamped boundary."""
    disc = Discretization(_cost_model(model, grid, epsilon, f_tilde), grid, "clamp", scheme)
    p0 = None if policy0 is None else policy0.indices
    rho, h, pol, iters, ok, hist = _ergodic_pi(disc, tol, max_iter, policy0=p0)
    if not ok:
        warnings.warn(f"ergodic policy iteration hit max_iter={max_iter}", NonConvergenceWarning)
    return ErgodicSolveResult(rho, ValueField(grid, h), PolicyField(grid, pol), hjb_residual(disc, h, rho), iters,
                              "policy-iteration", ok, {"rho_history": hist, "epsilon": epsilon})


def policy_evaluate(model: ModelSpec, grid: Grid, policy, epsilon: float = 0.0, *, f_tilde: Callable | None = None,
                    scheme: str = "hybrid") -> tuple[float, ValueField]:
    """Average cost and relative value of a fixed policy (control index, point, or field)."""
    disc = Discretization(_cost_model(model, grid, epsilon, f_tilde), grid, "clamp", scheme)
    rho, h = _evaluate(disc, _policy_array(model, grid, policy))
    return rho, ValueField(grid, h)


def extract_policy(model: ModelSpec, grid: Grid, value: ValueField, epsilon: float = 0.0, *,
                   f_tilde: Callable | None = None, scheme: str = "hybrid", boundary: str = "clamp") -> PolicyField:
    disc = Discretization(_cost_model(model, grid, epsilon, f_tilde), grid, boundary, scheme)
    return PolicyField(grid, greedy(disc.q_values(value.values)))


def default_alphas(last: float = 1e-3) -> list[float]:
    alphas, a = [], 0.5
    while a > last:
        alphas.append(a)
        a *= 0.5
    alphas.append(a)
    return alphas


def vanishing_discount(model: ModelSpec, grid: Grid, alphas: Sequence[float] | None = None, epsilon: float = 0.0,
                       tol: float = 1e-8, max_iter: int = 200, *, f_tilde: Callable | None = None,
                       scheme: str = "hybrid") -> ErgodicSolveResult:
    """Discounted solves on the whole grid for decreasing ``alpha``; reports ``alpha V_alpha(0)``."""
    alphas = default_alphas() if alphas is None else [float(a) for a in alphas]
    if any(b >= a for a, b in zip(alphas, alphas[1:])) or alphas[-1] <= 0:
        raise ValueError("alpha schedule must be strictly decreasing and positive")
    disc = Discretization(_cost_model(model, grid, epsilon, f_tilde), grid, "clamp", scheme)
    o = grid.origin_index
    pol, prev = None, None
    rho_hat, increments, iters_total, ok_all = [], [], 0, True
    for alpha in alphas:
        V, pol, iters, ok = _discounted_pi(disc, alpha, tol, max_iter, pol)
        iters_total += iters
        ok_all &= ok
        rho_hat.append(alpha * V[o])
        rel = V - V[o]
        if prev is not None:
            increments.append(float(np.abs(rel - prev).max()))
        prev = rel
    stalled = len(increments) >= 3 and increments[-1] > increments[-2] > increments[-3]
    if stalled:
        warnings.warn("vanishing-discount increments grew over the last three alphas", NonConvergenceWarning)
    rho = float(rho_hat[-1])
    diag = {"alphas": alphas, "rho_hat": [float(r) for r in rho_hat], "increments": increments,
            "nonconvergence": stalled, "epsilon": epsilon, "oscillation": float(prev.max() - prev.min())}
    return ErgodicSolveResult(rho, ValueField(grid, prev), PolicyField(grid, pol), hjb_residual(disc, prev, rho),
                              iters_total, "vanishing-discount", ok_all and not stalled, diag)


# --------------------------------------------------------------------------
# spatial truncation


@dataclass
class TruncationSweepResult:
    radii: list[float]
    values: list[float]
    outer_control: str
    epsilon: float
    outer_rho: float
    results: list[ErgodicSolveResult] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("sweep radii must be strictly increasing")


def truncation_sweep(model: ModelSpec, grid: Grid, radii: Sequence[float], outer_control, epsilon: float = 0.0,
                     tol: float = 1e-8, max_iter: int = 100, *, f_tilde: Callable | None = None,
                     scheme: str = "hybrid") -> TruncationSweepResult:
    """Optimal average cost over policies that follow ``outer_control`` outside ``B_R``, for each radius."""
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("need at least one radius")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("sweep radii must be strictly increasing")
    if radii[-1] > grid.R + 1e-12 or radii[0] < 0:
        raise ValueError("sweep radii must lie in [0, box radius]")
    disc = Discretization(_cost_model(model, grid, epsilon, f_tilde), grid, "clamp", scheme)
    outer = _policy_array(model, grid, outer_control)
    outer_rho, _ = _evaluate(disc, outer)  # raises SolverError for an unusable outer control
    tag = f"constant:{int(outer_control)}" if np.ndim(outer_control) == 0 and not isinstance(outer_control, PolicyField) else "policy-field"
    values, results = [], []
    pol = outer
    for R in radii:
        allowed = np.ones((grid.size, disc.K), dtype=bool)
        frozen = grid.norms >= R
        allowed[frozen] = False
        allowed[frozen, outer[frozen]] = True
        rho, h, pol, iters, ok, hist = _ergodic_pi(disc, tol, max_iter, allowed, policy0=pol)
        res = ErgodicSolveResult(rho, ValueField(grid, h), PolicyField(grid, pol), hjb_residual(disc, h, rho, allowed),
                                 iters, "policy-iteration", ok, {"rho_history": hist, "radius": R})
        values.append(rho)
        results.append(res)
    return TruncationSweepResult(radii, values, tag, epsilon, outer_rho, results)
