"""Running and final costs, and the discrete cost functional."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import GridSpec
from .stepper import TimeGrid

__all__ = ["CostFunctional", "QuadraticTrackingCost", "quadratic_tracking_cost", "accumulate_cost"]


@dataclass(frozen=True)
class CostFunctional:
    """Cost ``sum dt e^{-lam t_n} L(y_n, u_n, t_n) + e^{-lam T} g(y_N)``.

    ``running(Y, u, t)`` and ``final(Y)`` act on one state ``(d,)`` or on a
    batch of states ``(n, d)`` and return a scalar or an ``(n,)`` array.
    """

    running: Callable
    final: Callable
    discount: float = 0.0

    def __post_init__(self):
        if self.discount < 0:
            raise ValueError("discount must be non-negative")


class QuadraticTrackingCost(CostFunctional):
    """``L = w ||y||^2 + c |u|^2`` and ``g = w ||y||^2``.

    ``w`` is the quadrature weight of the discrete ``L^2(Omega)`` norm and
    ``c`` the control penalty.
    """

    def __init__(self, quad_weight: float, control_weight: float = 0.01, discount: float = 0.0):
        self.quad_weight = float(quad_weight)
        self.control_weight = float(control_weight)
        super().__init__(self._running, self._final, discount)

    def _sq(self, Y):
        Y = np.asarray(Y, dtype=float)
        return self.quad_weight * np.einsum("...i,...i->...", Y, Y)

    def _running(self, Y, u, t=0.0):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self._sq(Y) + self.control_weight * float(u @ u)

    def _final(self, Y):
        return self._sq(Y)

    def reduced(self, basis) -> "QuadraticTrackingCost":
        """Same cost on POD coordinates.

        With orthonormal basis columns ``||Psi a|| = ||a||``, so the lifted
        cost is the same quadratic form in the reduced coordinates.
        """
        return QuadraticTrackingCost(self.quad_weight, self.control_weight, self.discount)


def quadratic_tracking_cost(grid: GridSpec, control_weight: float = 0.01, discount: float = 0.0):
    """Tracking cost towards zero with rectangle-rule weight ``h^2`` at every grid point."""
    return QuadraticTrackingCost(grid.h**2, control_weight, discount)


def accumulate_cost(traj, controls, cf: CostFunctional, time_grid: TimeGrid, partial: bool = False):
    """Left-endpoint rectangle rule for the cost of a discrete trajectory.

    ``traj`` holds ``N + 1`` states, ``controls`` ``N`` control values. With
    ``partial=True`` the running sums after each step are returned as well
    (length ``N + 1``, starting at 0), without the final cost.
    """
    traj = np.asarray(traj, dtype=float)
    N = time_grid.n_steps
    if len(traj) != N + 1:
        raise ValueError(f"trajectory has {len(traj)} states, expected {N + 1}")
    if len(controls) != N:
        raise ValueError(f"got {len(controls)} controls, expected {N}")
    dt, lam = time_grid.dt, cf.discount
    terms = [dt * np.exp(-lam * n * dt) * float(cf.running(traj[n], controls[n], time_grid.t(n))) for n in range(N)]
    total = float(np.sum(terms)) + np.exp(-lam * N * dt) * float(cf.final(traj[N]))
    if partial:
        return total, np.concatenate([[0.0], np.cumsum(terms)])
    return total
