import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbtree.cost import CostFunctional, QuadraticTrackingCost, accumulate_cost, quadratic_tracking_cost
from hjbtree.model import GridSpec
from hjbtree.stepper import TimeGrid


@pytest.fixture(scope="module")
def cf31():
    return quadratic_tracking_cost(GridSpec(31, 31))


def test_zero_state_zero_control(cf31):
    z = np.zeros(961)
    assert cf31.running(z, [0.0]) == 0.0 and cf31.final(z) == 0.0


def test_control_penalty(cf31):
    assert cf31.running(np.zeros(961), [-2.0]) == pytest.approx(0.04, abs=1e-15)


def test_all_ones_quadrature(cf31):
    assert cf31.running(np.ones(961), [0.0]) == pytest.approx(961 / 900, rel=1e-14)


def test_batch_evaluation(cf31):
    Y = np.random.default_rng(0).normal(size=(4, 961))
    np.testing.assert_allclose(cf31.running(Y, [-1.0]), [cf31.running(y, [-1.0]) for y in Y], rtol=1e-14)


def test_accumulate_zero():
    tg = TimeGrid(0, 1, 0.1)
    cf = quadratic_tracking_cost(GridSpec(5, 5))
    assert accumulate_cost(np.zeros((11, 25)), np.zeros((10, 1)), cf, tg) == 0.0


def test_accumulate_unit_running_cost():
    cf = CostFunctional(lambda y, u, t=0.0: 1.0, lambda y: 0.0)
    assert accumulate_cost(np.zeros((11, 2)), np.zeros((10, 1)), cf, TimeGrid(0, 1, 0.1)) == pytest.approx(1.0)


def test_accumulate_left_rule_and_partial():
    cf = CostFunctional(lambda y, u, t=0.0: float(y[0]), lambda y: 10.0 * y[0])
    traj = np.arange(4.0)[:, None]
    total, part = accumulate_cost(traj, np.zeros((3, 1)), cf, TimeGrid(0, 0.3, 0.1), partial=True)
    # 0.1 * (0 + 1 + 2) + 10 * 3
    assert total == pytest.approx(30.3)
    np.testing.assert_allclose(part, [0.0, 0.0, 0.1, 0.3])


def test_length_mismatch():
    cf = quadratic_tracking_cost(GridSpec(5, 5))
    with pytest.raises(ValueError):
        accumulate_cost(np.zeros((10, 25)), np.zeros((10, 1)), cf, TimeGrid(0, 1, 0.1))
    with pytest.raises(ValueError):
        accumulate_cost(np.zeros((11, 25)), np.zeros((9, 1)), cf, TimeGrid(0, 1, 0.1))


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
@settings(max_examples=40, deadline=None)
def test_nonnegative_and_discount_monotone(seed, lam):
    rng = np.random.default_rng(seed)
    traj, us = rng.normal(size=(6, 9)), rng.uniform(-2, 0, size=(5, 1))
    tg = TimeGrid(0, 0.5, 0.1)
    a = accumulate_cost(traj, us, QuadraticTrackingCost(0.1, 0.01, lam), tg)
    b = accumulate_cost(traj, us, QuadraticTrackingCost(0.1, 0.01, 2 * lam), tg)
    assert a >= 0 and b <= a


def test_negative_discount_rejected():
    with pytest.raises(ValueError):
        QuadraticTrackingCost(1.0, discount=-1.0)
