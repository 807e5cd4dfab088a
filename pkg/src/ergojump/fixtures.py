"""Small reference problems used by the tests, scripts and CLI defaults."""

from __future__ import annotations

import numpy as np

from .model import ModelSpec, NetworkParams, build_linear_1d, build_v_model

# dX = -X dt + dW + dL, jumps +1 at rate 0.5 and -0.5 at rate 0.4
OU_ACTIONS = [{"drift": [0.0, -1.0], "cost": [0.0, 1.0]}]
OU_ATOMS = [[1.0, 0.5], [-0.5, 0.4]]

# action 1 pulls harder towards 0 but costs a constant premium
TWO_ACTION = [{"drift": [0.0, -0.5], "cost": [0.0, 1.0]}, {"drift": [0.0, -2.0], "cost": [0.6, 1.0]}]


def ou_jump_model() -> ModelSpec:
    return build_linear_1d(OU_ACTIONS, sigma=1.0, atoms=OU_ATOMS)


def two_action_model() -> ModelSpec:
    return build_linear_1d(TWO_ACTION, sigma=1.0, atoms=OU_ATOMS)


def v_params(**overrides) -> NetworkParams:
    """Two-class V network where only class 2 abandons.

    ``<e, M^{-1} ell> > 0``, so routing everything to class 1 (``u = (1, 0)``)
    is transient; ``u = (0, 1)`` is stabilizing.
    """
    kw = dict(
        ell=np.array([0.2, 0.2]),
        M1=np.diag([1.0, 1.5]),
        gamma=np.array([0.0, 1.0]),
        sigma=np.array([1.0, 1.0]),
        c=np.array([1.0, 2.0]),
        s=np.array([1.0]),
        m=1.0,
        theta=np.array([1.0, 0.5]),
        jump_rate=0.5,
        jump_sizes=((0.6, 0.5), (1.2, 0.5)),
        n_u=8,
    )
    kw.update(overrides)
    return NetworkParams(**kw)


def v_model(**overrides) -> ModelSpec:
    return build_v_model(v_params(**overrides))


def v_params_abandon_all(**overrides) -> NetworkParams:
    """V network with ``Gamma = I``, used for the Lyapunov checks."""
    kw = dict(gamma=np.array([1.0, 1.0]), M1=np.diag([1.0, 2.0]))
    kw.update(overrides)
    return v_params(**kw)


# control indices in the n_u=8 simplex lattice on R^2: (0, 1) first, (1, 0) last
V_ABANDONING = 0
V_TRANSIENT = 8
