import hypothesis
import numpy as np
import pytest

from ergojump import fixtures as fx
from ergojump.grid import Grid
from ergojump.model import ControlSpace, JumpMeasure, ModelSpec, constant_diffusion
from ergojump.solver import solve_ergodic_pi, vanishing_discount

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile("default")

# acceptance results, printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def simple_model(d=1, drift=None, sigma=0.0, atoms=(), cost=None, controls=None):
    """Uncontrolled-by-default model assembled directly, allowing degenerate sigma."""
    drift = drift or (lambda x, u: np.zeros(np.shape(x)))
    cost = cost or (lambda x, u: np.zeros(np.shape(x)[:-1]))
    sig = np.eye(d) * sigma
    if len(atoms):
        jm = JumpMeasure(np.array([np.atleast_1d(z) for z, _ in atoms], dtype=float),
                         np.array([w for _, w in atoms], dtype=float))
    else:
        jm = JumpMeasure.empty(d)
    return ModelSpec(d, drift, constant_diffusion(sig), jm, cost,
                     controls or ControlSpace.finite(np.zeros((1, 1))), name="simple")


@pytest.fixture(scope="session")
def ou():
    return fx.ou_jump_model()


@pytest.fixture(scope="session")
def vmodel():
    return fx.v_model()


@pytest.fixture(scope="session")
def vgrid():
    return Grid(2, 6.0, 81)


@pytest.fixture(scope="session")
def v_pi(vmodel, vgrid):
    return solve_ergodic_pi(vmodel, vgrid)


@pytest.fixture(scope="session")
def v_vd(vmodel, vgrid):
    return vanishing_discount(vmodel, vgrid)
