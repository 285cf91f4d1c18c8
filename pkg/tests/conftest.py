import numpy as np
import pytest
import scipy.sparse as sp

from hjbtree.cost import quadratic_tracking_cost
from hjbtree.model import (
    Affine,
    ControlSystem,
    GridSpec,
    Nonlinearity,
    assemble_burgers,
    assemble_reaction_diffusion,
    initial_condition,
)
from hjbtree.stepper import Stepper


def scalar_system(a=-1.0, func=None, dfunc=None, B=0.0):
    """One-dimensional ``y' = a y + func(y) + B u``."""
    f = func if func is not None else (lambda t, y: np.zeros_like(y))
    df = dfunc if dfunc is not None else (lambda t, y: np.zeros_like(y))
    return ControlSystem(1, 1, sp.csr_matrix([[a]]), Nonlinearity(f, lambda t, y: np.diag(df(t, y))),
                         Affine(np.array([[B]])))


@pytest.fixture(scope="session")
def toy():
    g = GridSpec(11, 11)
    return {"grid": g, "sys": assemble_reaction_diffusion(g), "x0": initial_condition(g),
            "cost": quadratic_tracking_cost(g), "stepper": Stepper()}


@pytest.fixture(scope="session")
def toy_burgers():
    g = GridSpec(11, 11, "dirichlet")
    return {"grid": g, "sys": assemble_burgers(g), "x0": initial_condition(g),
            "cost": quadratic_tracking_cost(g), "stepper": Stepper()}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
