"""Controlled jump diffusions with finite discrete Lévy measures.

A model is ``dX = b(X,U) dt + sigma(X) dW + dL`` where ``L`` is a compensated
compound Poisson process with finitely many jump atoms. All callables on
:class:`ModelSpec` broadcast over leading axes: ``x`` has shape ``(..., d)``
and ``u`` has shape ``(..., k)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import Grid, PolicyField


class ModelError(ValueError):
    pass


class SpecFieldError(ModelError):
    """Raised while parsing a model file; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"field '{field_name}': {message}")


# --------------------------------------------------------------------------
# control spaces and jump measures


def _simplex_lattice(dim: int, n_u: int) -> np.ndarray:
    pts = [c for c in itertools.product(range(n_u + 1), repeat=dim) if sum(c) == n_u]
    return np.array(pts, dtype=float) / n_u


@dataclass(frozen=True)
class ControlSpace:
    """Finite discretization of the action set.

    ``kind`` is one of ``"simplex"``, ``"product_simplex"``, ``"finite"``;
    ``dims`` holds the simplex dimensions. ``points`` has shape ``(K, k)``.
    """

    kind: str
    points: np.ndarray
    dims: tuple[int, ...] = ()

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.shape[0] < 1:
            raise ModelError("control space needs at least one point")
        if self.kind == "simplex":
            _check_simplex(pts)
        elif self.kind == "product_simplex":
            dc, _ = self.dims
            _check_simplex(pts[:, :dc])
            _check_simplex(pts[:, dc:])
        elif self.kind != "finite":
            raise ModelError(f"unknown control space kind {self.kind!r}")

    @classmethod
    def simplex(cls, dim: int, n_u: int = 8) -> "ControlSpace":
        return cls("simplex", _simplex_lattice(dim, n_u), (dim,))

    @classmethod
    def product_simplex(cls, dc: int, ds: int, n_u: int = 8) -> "ControlSpace":
        a, b = _simplex_lattice(dc, n_u), _simplex_lattice(ds, n_u)
        pts = np.array([np.concatenate([p, q]) for p in a for q in b])
        return cls("product_simplex", pts, (dc, ds))

    @classmethod
    def finite(cls, points) -> "ControlSpace":
        return cls("finite", np.atleast_2d(np.asarray(points, dtype=float)))

    def __len__(self) -> int:
        return self.points.shape[0]

    def index_of(self, u) -> int:
        u = np.asarray(u, dtype=float)
        dist = np.abs(self.points - u).max(axis=1)
        i = int(np.argmin(dist))
        if dist[i] > 1e-9:
            raise ModelError(f"control {u.tolist()} is not a lattice point")
        return i


def _check_simplex(pts: np.ndarray) -> None:
    if np.any(pts < 0) or np.any(np.abs(pts.sum(axis=1) - 1.0) > 1e-12):
        raise ModelError("simplex points must be nonnegative and sum to 1")


@dataclass(frozen=True)
class JumpMeasure:
    """Finite Lévy measure ``sum_i w_i delta_{z_i}``."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if z.ndim == 1:
            z = z.reshape(len(w), -1) if len(w) else z.reshape(0, 0)
        if z.shape[0] != w.shape[0]:
            raise ModelError("need one weight per jump atom")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ModelError("jump rates must be positive and finite")
        object.__setattr__(self, "atoms", z)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, d: int) -> "JumpMeasure":
        return cls(np.zeros((0, d)), np.zeros(0))

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def mean_jump(self) -> np.ndarray:
        return self.weights @ self.atoms if len(self.weights) else np.zeros(self.atoms.shape[1])

    def moment(self, m: float) -> float:
        return float(self.weights @ np.linalg.norm(self.atoms, axis=1) ** m)

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.atoms, axis=1).max()) if len(self.weights) else 0.0

    def scaled(self, lam: float) -> "JumpMeasure":
        return JumpMeasure(self.atoms, lam * self.weights)

    def __len__(self) -> int:
        return len(self.weights)


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ModelSpec:
    """A controlled jump-diffusion problem.

    ``drift(x, u) -> (..., d)``, ``diffusion(x) -> (..., d, d)``,
    ``cost(x, u) -> (...)``.
    """

    d: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    jumps: JumpMeasure
    cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    controls: ControlSpace
    growth_degree: float = 2.0
    name: str = "model"
    meta: dict = field(default_factory=dict, compare=False)

    def a(self, x) -> np.ndarray:
        s = self.diffusion(np.asarray(x, dtype=float))
        return 0.5 * s @ np.swapaxes(s, -1, -2)

    def compensated_drift(self, x, u) -> np.ndarray:
        """Drift of the local part of the generator, ``b - int z nu(dz)``."""
        return self.drift(x, u) - self.jumps.mean_jump

    def validate(self, grid: Grid, min_det: float = 1e-10) -> None:
        """Nonsingular diffusion and nonnegative cost at every grid node."""
        x = grid.nodes
        det = np.linalg.det(self.diffusion(x))
        if np.any(np.abs(det) < min_det):
            raise ModelError("diffusion matrix is singular at some grid node")
        c = self.cost(x[:, None, :], self.controls.points[None, :, :])
        if np.any(c < 0):
            raise ModelError("running cost is negative at some grid node")


def constant_diffusion(sigma) -> Callable[[np.ndarray], np.ndarray]:
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape[0] == 1 and sigma.shape[1] > 1:
        sigma = np.diag(sigma[0])

    def diffusion(x):
        x = np.asarray(x)
        return np.broadcast_to(sigma, x.shape[:-1] + sigma.shape)

    return diffusion


# --------------------------------------------------------------------------
# test functions and the generator


@dataclass(frozen=True)
class TestFunction:
    """Scalar function with gradient and Hessian, all broadcasting over ``(..., d)``."""

    __test__ = False  # not a pytest class

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return TestFunction(
            lambda x: self.value(x) + other.value(x),
            lambda x: self.grad(x) + other.grad(x),
            lambda x: self.hess(x) + other.hess(x),
        )

    def __mul__(self, c: float) -> "TestFunction":
        return TestFunction(lambda x: c * self.value(x), lambda x: c * self.grad(x), lambda x: c * self.hess(x))

    __rmul__ = __mul__


def quadratic(A=None, p=None, c0: float = 0.0, d: int | None = None) -> TestFunction:
    """``phi(x) = <x, A x> + <p, x> + c0`` (A symmetrized)."""
    if d is None:
        d = len(p) if p is not None else np.shape(A)[0]
    A = np.zeros((d, d)) if A is None else np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    p = np.zeros(d) if p is None else np.asarray(p, dtype=float)

    def value(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, A, x) + x @ p + c0

    def grad(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x @ A + p

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * A, x.shape[:-1] + (d, d))

    return TestFunction(value, grad, hess)


def eval_generator(model: ModelSpec, fn: TestFunction, x, u) -> np.ndarray:
    """Apply the integro-differential generator to ``fn`` at ``(x, u)``.

    Computes ``a:D^2 phi + <b - m, grad phi> + sum_i w_i (phi(x + z_i) - phi(x))``
    with ``m = sum_i w_i z_i``, so that ``L`` is a martingale.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    local = np.einsum("...ij,...ij->...", model.a(x), fn.hess(x))
    local = local + np.einsum("...i,...i->...", model.compensated_drift(x, u), fn.grad(x))
    J = model.jumps
    if len(J) == 0:
        return local
    shifted = x[..., None, :] + J.atoms
    nonlocal_ = (fn.value(shifted) - fn.value(x)[..., None]) @ J.weights
    return local + nonlocal_


# --------------------------------------------------------------------------
# queueing network models


@dataclass(frozen=True)
class NetworkParams:
    """Parameters of the limiting multiclass multi-pool network diffusion.

    Jump atoms are ``t * theta`` with rate ``jump_rate * p`` for each
    ``(t, p)`` in ``jump_sizes``, unless ``jump_atoms`` gives them directly.
    """

    ell: np.ndarray
    M1: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    c: np.ndarray
    s: np.ndarray
    m: float = 1.0
    M2: np.ndarray | None = None
    theta: np.ndarray | None = None
    jump_rate: float = 0.0
    jump_sizes: tuple = ()
    jump_atoms: tuple | None = None
    n_u: int = 8

    @property
    def d(self) -> int:
        return len(self.ell)

    @property
    def J(self) -> int:
        return len(self.s)

    def validate(self) -> None:
        d = self.d
        M1 = self.M1
        if M1.shape != (d, d):
            raise SpecFieldError("M1", f"expected shape ({d}, {d}), got {M1.shape}")
        if np.any(np.triu(M1, 1) != 0):
            raise SpecFieldError("M1", "must be lower triangular")
        if np.any(np.diag(M1) <= 0):
            raise SpecFieldError("M1", "diagonal entries must be positive")
        if self.gamma.shape != (d,):
            raise SpecFieldError("gamma", f"expected {d} entries")
        if np.any(self.gamma < 0):
            raise SpecFieldError("gamma", "entries must be nonnegative")
        if self.c.shape != (d,) or np.any(self.c <= 0):
            raise SpecFieldError("c", f"expected {d} positive entries")
        if self.J < 1 or np.any(self.s <= 0):
            raise SpecFieldError("s", "expected positive entries, one per server pool")
        if self.M2 is not None and self.M2.shape != (d, self.J):
            raise SpecFieldError("M2", f"expected shape ({d}, {self.J}), got {self.M2.shape}")
        if not self.m >= 1:
            raise SpecFieldError("m", f"cost exponent must be >= 1, got {self.m}")
        if self.sigma.shape not in {(d,), (d, d)}:
            raise SpecFieldError("sigma", f"expected {d} diagonal entries or a {d}x{d} matrix")
        if self.jump_atoms is None and self.jump_rate > 0:
            if self.theta is None or self.theta.shape != (d,) or np.any(self.theta <= 0):
                raise SpecFieldError("theta", f"expected {d} positive entries")
            probs = np.array([p for _, p in self.jump_sizes], dtype=float)
            if len(probs) == 0 or np.any(probs <= 0) or abs(probs.sum() - 1) > 1e-9:
                raise SpecFieldError("jump_sizes", "probabilities must be positive and sum to 1")
            if any(t <= 0 for t, _ in self.jump_sizes):
                raise SpecFieldError("jump_sizes", "jump sizes must be positive")
        if self.jump_rate < 0:
            raise SpecFieldError("jump_rate", "must be nonnegative")

    def jump_measure(self) -> JumpMeasure:
        if self.jump_atoms is not None:
            if len(self.jump_atoms) == 0:
                return JumpMeasure.empty(self.d)
            z = np.array([a for a, _ in self.jump_atoms], dtype=float)
            w = np.array([w for _, w in self.jump_atoms], dtype=float)
            return JumpMeasure(z, w)
        if self.jump_rate == 0:
            return JumpMeasure.empty(self.d)
        z = np.array([t * self.theta for t, _ in self.jump_sizes])
        w = np.array([self.jump_rate * p for _, p in self.jump_sizes])
        return JumpMeasure(z, w)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkParams":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        for key in data:
            if key not in known:
                raise SpecFieldError(key, "unknown field")
        for key in ("ell", "M1", "gamma", "sigma", "c", "s"):
            if key not in data:
                raise SpecFieldError(key, "missing required field")

        def arr(key, ndim=None):
            try:
                a = np.array(data[key], dtype=float)
            except (TypeError, ValueError) as exc:
                raise SpecFieldError(key, f"not numeric: {exc}") from None
            if ndim is not None and a.ndim != ndim:
                raise SpecFieldError(key, f"expected a {ndim}-d array")
            if not np.all(np.isfinite(a)):
                raise SpecFieldError(key, "entries must be finite")
            return a

        kw = dict(
            ell=arr("ell", 1),
            M1=arr("M1", 2),
            gamma=arr("gamma", 1),
            sigma=arr("sigma"),
            c=arr("c", 1),
            s=arr("s", 1),
        )
        if "M2" in data and data["M2"] is not None:
            kw["M2"] = arr("M2", 2)
        if "theta" in data and data["theta"] is not None:
            kw["theta"] = arr("theta", 1)
        for key in ("m", "jump_rate"):
            if key in data:
                try:
                    kw[key] = float(data[key])
                except (TypeError, ValueError):
                    raise SpecFieldError(key, "must be a number") from None
        if "n_u" in data:
            if not isinstance(data["n_u"], int) or data["n_u"] < 1:
                raise SpecFieldError("n_u", "must be a positive integer")
            kw["n_u"] = data["n_u"]
        if "jump_sizes" in data:
            try:
                kw["jump_sizes"] = tuple((float(t), float(p)) for t, p in data["jump_sizes"])
            except (TypeError, ValueError):
                raise SpecFieldError("jump_sizes", "expected a list of [size, probability] pairs") from None
        if "jump_atoms" in data and data["jump_atoms"] is not None:
            try:
                atoms = tuple((tuple(float(v) for v in z), float(w)) for z, w in data["jump_atoms"])
            except (TypeError, ValueError):
                raise SpecFieldError("jump_atoms", "expected a list of [[z_1, ..., z_d], rate] pairs") from None
            for z, w in atoms:
                if len(z) != len(kw["ell"]):
                    raise SpecFieldError("jump_atoms", f"atom {list(z)} has wrong dimension")
                if w <= 0:
                    raise SpecFieldError("jump_atoms", "rates must be positive")
            kw["jump_atoms"] = atoms
        params = cls(**kw)
        params.validate()
        return params

    def to_dict(self) -> dict:
        out = {
            "ell": self.ell.tolist(),
            "M1": self.M1.tolist(),
            "gamma": self.gamma.tolist(),
            "sigma": self.sigma.tolist(),
            "c": self.c.tolist(),
            "s": self.s.tolist(),
            "m": self.m,
            "n_u": self.n_u,
            "jump_rate": self.jump_rate,
            "jump_sizes": [list(p) for p in self.jump_sizes],
        }
        if self.M2 is not None:
            out["M2"] = self.M2.tolist()
        if self.theta is not None:
            out["theta"] = self.theta.tolist()
        if self.jump_atoms is not None:
            out["jump_atoms"] = [[list(z), w] for z, w in self.jump_atoms]
        return out


def load_network_params(path) -> NetworkParams:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecFieldError("<file>", f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise SpecFieldError("<file>", "top level must be an object")
    return NetworkParams.from_dict(data)


def _network_cost(c, s, m, d):
    def cost(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        e = x.sum(axis=-1, keepdims=True)
        ep, em = np.maximum(e, 0.0), np.maximum(-e, 0.0)
        uc, us = u[..., :d], u[..., d:]
        q = (c * (ep * uc) ** m).sum(axis=-1)
        idle = (s * (em * us) ** m).sum(axis=-1)
        return q + idle

    return cost


def build_v_model(params: NetworkParams) -> ModelSpec:
    """'V' network: d classes, one server pool, ``Gamma`` abandonment rates."""
    params.validate()
    if params.J != 1:
        raise ModelError(f"the V model has a single server pool, got J={params.J}")
    d = params.d
    ell, M, G = params.ell, params.M1, params.gamma

    def drift(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)[..., :d]
        ep = np.maximum(x.sum(axis=-1, keepdims=True), 0.0)
        return ell - (x - ep * u) @ M.T - ep * (u * G)

    cw, s1, m = params.c, float(params.s[0]), params.m

    def cost(x, u):
        x = np.asarray(x, dtype=float)
        e = x.sum(axis=-1, keepdims=True)
        ep, em = np.maximum(e, 0.0), np.maximum(-e[..., 0], 0.0)
        return (cw * (ep * np.asarray(u, dtype=float)[..., :d]) ** m).sum(axis=-1) + s1 * em**m

    return ModelSpec(
        d=d,
        drift=drift,
        diffusion=constant_diffusion(params.sigma),
        jumps=params.jump_measure(),
        cost=cost,
        controls=ControlSpace.simplex(d, params.n_u),
        growth_degree=params.m,
        name="V",
        meta={"params": params.to_dict()},
    )


def w_network_params(mu11, mu21, mu22, mu32, ell, sigma, *, gamma=(0.0, 0.0, 1.0), c=(1.0, 1.0, 1.0),
                     s=(1.0, 1.0), m=1.0, theta=None, jump_rate=0.0, jump_sizes=(), n_u=8) -> NetworkParams:
    for name, v in (("mu11", mu11), ("mu21", mu21), ("mu22", mu22), ("mu32", mu32)):
        if not v > 0:
            raise SpecFieldError(name, "service rates must be positive")
    M1 = np.array([[mu11, 0, 0], [mu22 - mu21, mu22, 0], [0, 0, mu32]], dtype=float)
    M2 = np.array([[0, 0], [mu21 - mu22, 0], [0, 0]], dtype=float)
    return NetworkParams(
        ell=np.asarray(ell, float), M1=M1, M2=M2, gamma=np.asarray(gamma, float),
        sigma=np.asarray(sigma, float), c=np.asarray(c, float), s=np.asarray(s, float), m=m,
        theta=None if theta is None else np.asarray(theta, float), jump_rate=jump_rate,
        jump_sizes=tuple(jump_sizes), n_u=n_u,
    )


def build_w_model(params: NetworkParams) -> ModelSpec:
    """'W' network: three classes, two pools; controls are ``(u^c, u^s)`` stacked."""
    params.validate()
    if params.d != 3 or params.J != 2:
        raise ModelError(f"the W model needs d=3 and J=2, got d={params.d}, J={params.J}")
    if params.M2 is None:
        raise SpecFieldError("M2", "required for the W model")
    d = 3
    ell, M1, M2, G = params.ell, params.M1, params.M2, params.gamma

    def drift(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        uc, us = u[..., :d], u[..., d:]
        e = x.sum(axis=-1, keepdims=True)
        ep, em = np.maximum(e, 0.0), np.maximum(-e, 0.0)
        return ell - (x - ep * uc) @ M1.T - ep * (uc * G) + em * (us @ M2.T)

    return ModelSpec(
        d=d,
        drift=drift,
        diffusion=constant_diffusion(params.sigma),
        jumps=params.jump_measure(),
        cost=_network_cost(params.c, params.s, params.m, d),
        controls=ControlSpace.product_simplex(3, 2, params.n_u),
        growth_degree=params.m,
        name="W",
        meta={"params": params.to_dict()},
    )


def build_linear_1d(actions: Sequence[dict], sigma: float, atoms: Sequence = ()) -> ModelSpec:
    """One-dimensional model with finitely many actions.

    Each action is ``{"drift": [b0, b1], "cost": [k0, k2]}`` giving drift
    ``b0 + b1 x`` and cost ``k0 + k2 x^2``. ``atoms`` is a list of ``[z, w]``.
    """
    if len(actions) < 1:
        raise SpecFieldError("actions", "need at least one action")
    try:
        B = np.array([a["drift"] for a in actions], dtype=float)
        K = np.array([a["cost"] for a in actions], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise SpecFieldError("actions", "each action needs 'drift': [b0, b1] and 'cost': [k0, k2]") from None
    if B.shape != (len(actions), 2):
        raise SpecFieldError("actions", "drift must be [b0, b1]")
    if K.shape != (len(actions), 2) or np.any(K < 0):
        raise SpecFieldError("actions", "cost must be [k0, k2] with nonnegative entries")
    if not sigma > 0:
        raise SpecFieldError("sigma", "must be positive")
    if len(atoms):
        try:
            z = np.array([[float(a[0])] for a in atoms])
            w = np.array([float(a[1]) for a in atoms])
        except (TypeError, ValueError, IndexError):
            raise SpecFieldError("atoms", "expected a list of [z, rate] pairs") from None
        jumps = JumpMeasure(z, w)
    else:
        jumps = JumpMeasure.empty(1)

    def _idx(u):
        return np.rint(np.asarray(u, dtype=float)[..., 0]).astype(np.int64)

    def drift(x, u):
        x = np.asarray(x, dtype=float)
        i = _idx(u)
        return (B[i, 0] + B[i, 1] * x[..., 0])[..., None]

    def cost(x, u):
        x = np.asarray(x, dtype=float)
        i = _idx(u)
        return K[i, 0] + K[i, 1] * x[..., 0] ** 2

    return ModelSpec(
        d=1,
        drift=drift,
        diffusion=constant_diffusion([[sigma]]),
        jumps=jumps,
        cost=cost,
        controls=ControlSpace.finite(np.arange(len(actions), dtype=float)[:, None]),
        growth_degree=2.0,
        name="linear1d",
        meta={"actions": [dict(drift=list(map(float, b)), cost=list(map(float, k))) for b, k in zip(B, K)],
              "sigma": float(sigma), "atoms": [[float(zz[0]), float(ww)] for zz, ww in zip(jumps.atoms, jumps.weights)]},
    )


# --------------------------------------------------------------------------
# Lyapunov functions


@dataclass(frozen=True)
class LyapunovSpec:
    """``scale * g(x)^k`` with ``g`` a smoothed ``<x, Qx>^{1/2}``.

    Inside the Q-ball of radius ``r_s = sqrt(min eig Q)``, the Q-norm ``r`` is
    replaced by the even quartic ``3 r_s/8 + 3 r^2/(4 r_s) - r^4/(8 r_s^3)``,
    which matches value, slope and curvature at ``r_s`` and is convex and
    increasing. ``{|x| >= 1}`` lies outside that ball, so ``g`` is exact there.
    """

    Q: np.ndarray
    k: float = 2.0
    scale: float = 1.0

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() <= 0:
            raise ModelError("Q must be symmetric positive definite")
        if not self.k > 0:
            raise ModelError("Lyapunov exponent must be positive")
        object.__setattr__(self, "Q", Q)

    @property
    def r_s(self) -> float:
        return float(math.sqrt(np.linalg.eigvalsh(self.Q).min()))

    def _g(self, x):
        x = np.asarray(x, dtype=float)
        r1 = self.r_s
        Qx = x @ self.Q
        q = np.einsum("...i,...i->...", x, Qx)
        r = np.sqrt(q)
        inner = q < r1 * r1
        c0, c2, c4 = 3 * r1 / 8, 3 / (4 * r1), -1 / (8 * r1**3)
        g = np.where(inner, c0 + c2 * q + c4 * q * q, r)
        rs = np.where(inner, 1.0, r)
        # inner: grad = 2 (c2 + 2 c4 q) Qx ; outer: Qx / r
        gp = np.where(inner, 2 * (c2 + 2 * c4 * q), 1.0 / rs)
        grad = gp[..., None] * Qx
        outer_h = self.Q / rs[..., None, None] - np.einsum("...i,...j->...ij", Qx, Qx) / (rs**3)[..., None, None]
        inner_h = gp[..., None, None] * self.Q + 8 * c4 * np.einsum("...i,...j->...ij", Qx, Qx)
        hess = np.where(inner[..., None, None], inner_h, outer_h)
        return g, grad, hess

    def value(self, x):
        g, _, _ = self._g(x)
        return self.scale * g**self.k

    def grad(self, x):
        g, dg, _ = self._g(x)
        return self.scale * (self.k * g ** (self.k - 1))[..., None] * dg

    def hess(self, x):
        g, dg, hg = self._g(x)
        k = self.k
        outer = np.einsum("...i,...j->...ij", dg, dg)
        return self.scale * ((k * g ** (k - 1))[..., None, None] * hg
                             + (k * (k - 1) * g ** (k - 2))[..., None, None] * outer)

    def as_test_function(self) -> TestFunction:
        return TestFunction(self.value, self.grad, self.hess)


def quadratic_form_margin(Q, M1) -> float:
    """Smallest eigenvalue of ``Q M1 + M1^T Q`` (quadratic Lyapunov constructions for these networks ask for >= 8)."""
    Q = np.diag(Q) if np.ndim(Q) == 1 else np.asarray(Q, dtype=float)
    M1 = np.asarray(M1, dtype=float)
    S = Q @ M1 + M1.T @ Q
    return float(np.linalg.eigvalsh(0.5 * (S + S.T)).min())


def power_penalty(C: float, m: float) -> Callable:
    """``F(x, u) = C |x|^m``."""

    def F(x, u=None):
        return C * np.linalg.norm(np.asarray(x, dtype=float), axis=-1) ** m

    return F


def cone_mask(x, delta: float) -> np.ndarray:
    """Membership in ``K_delta = {|<e, x>| > delta |x|}``."""
    x = np.asarray(x, dtype=float)
    return np.abs(x.sum(axis=-1)) > delta * np.linalg.norm(x, axis=-1)


@dataclass
class LyapunovReport:
    form: str
    nodes: np.ndarray
    control_indices: np.ndarray  # (N, K') control index used in each column
    generator: np.ndarray  # (N, K')
    bound: np.ndarray  # (N, K')
    satisfied: np.ndarray  # (N, K') bool
    region_radius: float
    shell_frac: float

    @property
    def violation(self) -> np.ndarray:
        return np.maximum(self.generator - self.bound, 0.0)

    @property
    def violation_fraction(self) -> float:
        return float(np.mean(~self.satisfied))

    @property
    def max_violation(self) -> float:
        return float(self.violation.max())

    @property
    def stabilization_radius(self) -> float:
        """Largest ``|x|`` at which some control violates the inequality (0 if none)."""
        bad = ~self.satisfied.all(axis=1)
        return float(np.linalg.norm(self.nodes[bad], axis=1).max()) if bad.any() else 0.0

    @property
    def shell_mask(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=1) >= self.shell_frac * self.region_radius

    @property
    def shell_violation_fraction(self) -> float:
        return float(np.mean(~self.satisfied[self.shell_mask]))

    def summary(self) -> dict:
        return {
            "form": self.form,
            "violation_fraction": self.violation_fraction,
            "max_violation": self.max_violation,
            "stabilization_radius": self.stabilization_radius,
            "shell_violation_fraction": self.shell_violation_fraction,
            "region_radius": self.region_radius,
        }


def _control_columns(model: ModelSpec, grid: Grid, control) -> np.ndarray:
    N, K = grid.size, len(model.controls)
    if control is None:
        return np.broadcast_to(np.arange(K), (N, K))
    if isinstance(control, PolicyField):
        return control.indices[:, None]
    if callable(control):
        return np.asarray(control(grid.nodes), dtype=np.int64).reshape(N, 1)
    if np.ndim(control) == 0:
        return np.full((N, 1), int(control))
    return np.full((N, 1), model.controls.index_of(control))


def check_lyapunov(model: ModelSpec, lyap: LyapunovSpec, grid: Grid, control=None, *, form: str = "stabilizing",
                   ball_radius: float = 1.0, kappa_hat: float = 1.0, F: Callable | None = None,
                   delta: float = 0.1, shell_frac: float = 0.75) -> LyapunovReport:
    """Scan Foster-Lyapunov drift inequalities over the nodes of ``grid``.

    ``form="penalty"``: ``A_u V <= 1_B - F`` off the cone ``K_delta`` and
    ``A_u V <= 1_B + c`` on it, for every control in ``control`` (default: all).
    ``form="stabilizing"``: ``A_v V <= kappa_hat 1_B - c_v`` for the given control/policy.
    Violations are reported, never raised.
    """
    x = grid.nodes
    cols = _control_columns(model, grid, control)
    u = model.controls.points[cols]  # (N, K', k)
    xb = np.broadcast_to(x[:, None, :], cols.shape + (model.d,))
    gen = eval_generator(model, lyap.as_test_function(), xb, u)
    c = model.cost(xb, u)
    in_ball = (np.linalg.norm(x, axis=1) < ball_radius)[:, None].astype(float)
    if form == "penalty":
        if F is None:
            raise ModelError("form penalty needs the penalty F")
        on_cone = cone_mask(x, delta)[:, None]
        bound = np.where(on_cone, in_ball + c, in_ball - F(xb, u))
    elif form == "stabilizing":
        bound = kappa_hat * in_ball - c
    else:
        raise ModelError(f"unknown form {form!r}")
    return LyapunovReport(form, x, np.asarray(cols), gen, bound, gen <= bound, grid.R, shell_frac)


# --------------------------------------------------------------------------
# perturbed costs


@dataclass(frozen=True)
class PerturbedCostSpec:
    epsilon: float
    f_tilde: Callable
    kappa_tilde: float = 1.0

    def __post_init__(self):
        if not self.kappa_tilde >= 1:
            raise ModelError(f"kappa_tilde must be >= 1, got {self.kappa_tilde}")
        if not 0 <= self.epsilon < 1.0 / self.kappa_tilde:
            raise ModelError(f"epsilon must lie in [0, 1/kappa_tilde) = [0, {1 / self.kappa_tilde:.6g}), got {self.epsilon}")

    def sandwich_holds(self, model: ModelSpec, grid: Grid) -> bool:
        x = grid.nodes[:, None, :]
        u = model.controls.points[None]
        return bool(np.all(model.cost(x, u) <= self.f_tilde(x, u) + 1e-12))

    def coercive_on(self, model: ModelSpec, grid: Grid) -> bool:
        """Numeric proxy: min of F over the outer shell exceeds its max over the inner half-box."""
        x = grid.nodes
        vals = self.f_tilde(x[:, None, :], model.controls.points[None]).min(axis=1)
        sup = np.abs(x).max(axis=1)
        return bool(vals[sup >= grid.R - 1e-12].min() > vals[sup <= grid.R / 2].max())


def perturbed_model(model: ModelSpec, spec: PerturbedCostSpec) -> ModelSpec:
    if not 0 <= spec.epsilon < 1.0 / spec.kappa_tilde:
        raise ModelError("epsilon outside [0, 1/kappa_tilde)")
    if spec.epsilon == 0:
        return model
    base, eps, Ft = model.cost, spec.epsilon, spec.f_tilde

    def cost(x, u):
        return base(x, u) + eps * Ft(x, u)

    return replace(model, cost=cost, name=f"{model.name}+eps{eps:g}")


def default_f_tilde(model: ModelSpec, grid: Grid, margin: float = 1.1) -> tuple[Callable, float]:
    """``F(x) = C_F (1 + |x|^m)`` with ``C_F`` the smallest constant dominating ``c`` on the grid, times ``margin``."""
    m = model.growth_degree
    x = grid.nodes
    c = model.cost(x[:, None, :], model.controls.points[None]).max(axis=1)
    C_F = margin * float(np.max(c / (1.0 + np.linalg.norm(x, axis=1) ** m)))
    C_F = max(C_F, 1e-12)

    def f_tilde(x, u=None):
        return C_F * (1.0 + np.linalg.norm(np.asarray(x, dtype=float), axis=-1) ** m)

    return f_tilde, C_F


def kappa_tilde_on_grid(model: ModelSpec, f_tilde: Callable, grid: Grid, F: Callable, *, delta: float = 0.1,
                        ball_radius: float = 1.0) -> float:
    """Smallest ``kappa >= 1`` with ``F~ <= kappa (1_B + c 1_K~ + F 1_{K~^c})`` on the grid."""
    x = grid.nodes[:, None, :]
    u = model.controls.points[None]
    xb = np.broadcast_to(x, (grid.size, len(model.controls), model.d))
    c = model.cost(xb, u)
    Fv = F(xb, u)
    in_k = cone_mask(xb, delta) | (c > Fv)
    denom = (np.linalg.norm(xb, axis=-1) < ball_radius) + np.where(in_k, c, Fv)
    num = f_tilde(xb, u)
    with np.errstate(divide="ignore"):
        ratio = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), np.inf)
    return max(1.0, float(ratio.max()))


def make_perturbation(model: ModelSpec, grid: Grid, epsilon: float, F: Callable, *, delta: float = 0.1,
                      ball_radius: float = 1.0, margin: float = 1.1) -> PerturbedCostSpec:
    ft, _ = default_f_tilde(model, grid, margin)
    kappa = kappa_tilde_on_grid(model, ft, grid, F, delta=delta, ball_radius=ball_radius)
    return PerturbedCostSpec(epsilon, ft, kappa)
