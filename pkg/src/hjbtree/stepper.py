"""Euler time steppers used to grow trees and to integrate trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import weakref

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import dgbsv

__all__ = [
    "TimeGrid",
    "NewtonParams",
    "NewtonDiverged",
    "Stepper",
    "explicit_euler_step",
    "implicit_euler_step",
]


class NewtonDiverged(RuntimeError):
    """Raised when Newton's method misses its tolerance within ``max_iter`` iterations."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``t_n = t0 + n dt`` of ``[t0, T]``."""

    t0: float
    T: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.T <= self.t0:
            raise ValueError("horizon must satisfy T > t0")
        steps = (self.T - self.t0) / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"dt={self.dt} does not divide [{self.t0}, {self.T}]")

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t0) / self.dt))

    def t(self, n: int) -> float:
        return self.t0 + n * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class NewtonParams:
    tol: float = 1e-4
    max_iter: int = 50

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("Newton needs at least one iteration")


class _BandedNewton:
    """LAPACK band storage of ``I - dt J`` for systems with structured Jacobians.

    Five-point stencils in natural ordering have bandwidth ``nx``; a band LU
    is several times cheaper than a general sparse factorization there.
    """

    def __init__(self, sys, bw: int, matrices: list):
        self.d = sys.dim
        self.bw = bw
        self.rows = 3 * bw + 1
        self.diag_row = 2 * bw
        self.base = self._band(sys.linear_part)
        self.scaled = {id(M): self._band(M) for M in matrices}

    def _band(self, M) -> list:
        """Nonzero band rows of ``M`` as ``(band_row, values, matrix_rows)`` triples."""
        M = sp.coo_matrix(M)
        out = []
        cols = np.arange(self.d)
        for off in np.unique(M.row - M.col):
            sel = (M.row - M.col) == off
            vals = np.zeros(self.d)
            np.add.at(vals, M.col[sel], M.data[sel])
            rows = np.clip(cols + off, 0, self.d - 1)
            out.append((2 * self.bw + int(off), vals, rows))
        return out

    def solve(self, v, scaled, dt, r) -> np.ndarray:
        ab = np.zeros((self.rows, self.d))
        for k, vals, _ in self.base:
            ab[k] -= dt * vals
        for scale, M in scaled:
            for k, vals, rows in self.scaled[id(M)]:
                ab[k] -= dt * vals * scale[rows]
        ab[self.diag_row] += 1.0 - dt * v
        _, _, x, info = dgbsv(self.bw, self.bw, ab, r, overwrite_ab=1, overwrite_b=0)
        if info != 0:
            raise np.linalg.LinAlgError(f"singular Newton matrix (dgbsv info={info})")
        return x


_BANDED: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _bandwidth(M) -> int:
    M = sp.coo_matrix(M)
    return int(np.max(np.abs(M.row - M.col))) if M.nnz else 0


def _banded_plan(sys, terms):
    try:
        return _BANDED[sys]
    except (KeyError, TypeError):
        pass
    plan = None
    if terms is not None and sp.issparse(getattr(sys, "linear_part", None)):
        matrices = [M for _, M in terms[1]]
        bw = max([_bandwidth(sys.linear_part)] + [_bandwidth(M) for M in matrices] + [1])
        if 4 * bw < sys.dim:
            plan = _BandedNewton(sys, bw, matrices)
    try:
        _BANDED[sys] = plan
    except TypeError:
        pass
    return plan


def _newton_update(sys, z, u, t1, dt, r):
    jt = getattr(sys, "jacobian_terms", None)
    terms = jt(z, u, t1) if jt is not None else None
    plan = _banded_plan(sys, terms) if terms is not None else None
    if plan is not None and all(id(M) in plan.scaled for _, M in terms[1]):
        return plan.solve(terms[0], terms[1], dt, r)
    Jf = sys.jacobian(z, u, t1)
    if sp.issparse(Jf):
        J = sp.identity(z.size, format="csc") - dt * Jf
        return spla.splu(sp.csc_matrix(J)).solve(r)
    return np.linalg.solve(np.eye(z.size) - dt * np.asarray(Jf), r)


def explicit_euler_step(sys, y, u, t, dt):
    """``y + dt f(y, u, t)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.asarray(y, dtype=float)
    return y + dt * sys.rhs(y, u, t)


def implicit_euler_step(sys, y, u, t, dt, newton: NewtonParams = NewtonParams(), return_residual=False):
    """Solve ``z = y + dt f(z, u, t + dt)`` by Newton's method started at ``y``.

    The iteration stops once ``max|z - y - dt f(z, u, t + dt)| <= newton.tol``.
    Narrow-band sparse Jacobians go through a LAPACK band solver, other sparse
    ones through SuperLU, dense ones through a dense LU.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.asarray(y, dtype=float)
    t1 = t + dt
    z = y.copy()
    r = z - y - dt * sys.rhs(z, u, t1)
    res = float(np.max(np.abs(r))) if r.size else 0.0
    it = 0
    while res > newton.tol:
        if it == newton.max_iter:
            raise NewtonDiverged(f"residual {res:.3e} > {newton.tol:.1e} after {it} iterations")
        z = z - _newton_update(sys, z, u, t1, dt, r)
        r = z - y - dt * sys.rhs(z, u, t1)
        res = float(np.max(np.abs(r)))
        it += 1
    if return_residual:
        return z, res
    return z


def _implicit_batch_dense(sys, Y, us, t, dt, newton):
    """Vectorized Newton for small dense systems exposing batch Jacobians."""
    t1 = t + dt
    Z = Y.copy()
    R = Z - Y - dt * sys.rhs_batch(Z, us, t1)
    res = np.max(np.abs(R), axis=1)
    active = np.flatnonzero(res > newton.tol)
    eye = np.eye(Y.shape[1])
    it = 0
    while active.size:
        if it == newton.max_iter:
            raise NewtonDiverged(
                f"{active.size} states missed tolerance {newton.tol:.1e} after {it} iterations"
            )
        Ja = sys.jacobian_batch(Z[active], us[active], t1)
        dZ = np.linalg.solve(eye - dt * Ja, R[active][..., None])[..., 0]
        Z[active] -= dZ
        R[active] = Z[active] - Y[active] - dt * sys.rhs_batch(Z[active], us[active], t1)
        res = np.max(np.abs(R[active]), axis=1)
        active = active[res > newton.tol]
        it += 1
    return Z


@dataclass(frozen=True)
class Stepper:
    """Configured single-step map ``(y, u, t) -> y_next`` with a fixed ``dt``-agnostic method."""

    method: Literal["implicit", "explicit"] = "implicit"
    newton: NewtonParams = field(default_factory=NewtonParams)

    def __post_init__(self):
        if self.method not in ("implicit", "explicit"):
            raise ValueError(f"unknown stepper {self.method!r}")

    def step(self, sys, y, u, t, dt):
        if self.method == "explicit":
            return explicit_euler_step(sys, y, u, t, dt)
        return implicit_euler_step(sys, y, u, t, dt, self.newton)

    def step_many(self, sys, Y: np.ndarray, us: np.ndarray, t: float, dt: float) -> np.ndarray:
        """Advance every row of ``Y`` under its own control row in ``us``.

        Results do not depend on how the rows are grouped into calls.
        """
        Y = np.asarray(Y, dtype=float)
        us = np.asarray(us, dtype=float).reshape(len(Y), -1)
        if self.method == "explicit":
            return Y + dt * sys.rhs_batch(Y, us, t)
        if getattr(sys, "batched", False):
            return _implicit_batch_dense(sys, Y, us, t, dt, self.newton)
        out = np.empty_like(Y)
        for i in range(len(Y)):
            out[i] = implicit_euler_step(sys, Y[i], us[i], t, dt, self.newton)
        return out

