"""Semi-discretized control systems ``y' = A y + F(t, y) + G(y, u)``.

Two finite-difference models on the unit square are provided: a
reaction-diffusion equation with a cubic nonlinearity and homogeneous
Neumann boundary conditions, controlled through a fixed spatial profile,
and a viscous Burgers equation with homogeneous Dirichlet boundary
conditions, controlled bilinearly through a reaction term.

Grid points are ordered row-major with ``x1`` running fastest, so the point
``(x1[i], x2[j])`` has flat index ``j * nx + i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GridSpec",
    "Affine",
    "AffineVector",
    "BilinearState",
    "Nonlinearity",
    "ComponentwiseNonlinearity",
    "ConvectiveNonlinearity",
    "ControlSystem",
    "laplacian_1d",
    "assemble_reaction_diffusion",
    "assemble_burgers",
    "initial_condition",
    "eval_rhs",
]

Boundary = Literal["neumann", "dirichlet"]


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on ``[0, 1]^2``."""

    nx: int
    ny: int
    boundary: Boundary = "neumann"

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2 points per direction, got {self.nx}x{self.ny}")
        if self.nx != self.ny:
            # a single spacing h is used by the quadrature and the stencils
            raise ValueError("only square grids (nx == ny) are supported")
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary type {self.boundary!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat ``(x1, x2)`` coordinate arrays in state ordering."""
        x1 = np.linspace(0.0, 1.0, self.nx)
        x2 = np.linspace(0.0, 1.0, self.ny)
        X1, X2 = np.meshgrid(x1, x2, indexing="xy")
        return X1.ravel(), X2.ravel()

    def boundary_mask(self) -> np.ndarray:
        """Boolean mask of points lying on the boundary of the square."""
        mask = np.zeros((self.ny, self.nx), dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask.ravel()


# --- control operators ---------------------------------------------------------------


@dataclass(frozen=True)
class Affine:
    """``G(y, u) = B u`` with a ``d x m`` matrix ``B``."""

    B: np.ndarray


@dataclass(frozen=True)
class AffineVector:
    """``G(y, u) = u * b`` for a scalar control and a fixed profile ``b``."""

    b: np.ndarray


@dataclass(frozen=True)
class BilinearState:
    """``G(y, u) = u * y`` for a scalar control.

    ``mask`` optionally zeroes the term on pinned (Dirichlet) rows.
    """

    mask: np.ndarray | None = None


ControlOperator = Affine | AffineVector | BilinearState


# --- nonlinearities ------------------------------------------------------------------


class Nonlinearity:
    """Generic nonlinearity ``F(t, y)`` with an optional Jacobian.

    ``func`` must accept a state of shape ``(d,)`` or a batch ``(n, d)``.
    Without ``jac`` the Jacobian is approximated by forward differences.
    """

    componentwise = False
    quadratic = False

    def __init__(self, func: Callable, jac: Callable | None = None):
        self._func = func
        self._jac = jac

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        return self._func(t, y)

    def jacobian_terms(self, t: float, y: np.ndarray):
        """Structured Jacobian ``diag(v) + sum_k diag(s_k) M_k``, or ``None`` if unknown."""
        return None

    def jacobian(self, t: float, y: np.ndarray):
        if self._jac is not None:
            return self._jac(t, y)
        f0 = self(t, y)
        eps = np.sqrt(np.finfo(float).eps)
        J = np.empty((y.size, y.size))
        for i in range(y.size):
            step = eps * max(1.0, abs(y[i]))
            yp = y.copy()
            yp[i] += step
            J[:, i] = (self(t, yp) - f0) / step
        return J


class ComponentwiseNonlinearity(Nonlinearity):
    """``F(t, y)_i = fbar(t, y_i)`` with scalar derivative ``dfbar``."""

    componentwise = True

    def __init__(self, fbar: Callable, dfbar: Callable):
        self.fbar = fbar
        self.dfbar = dfbar

    def __call__(self, t, y):
        return self.fbar(t, y)

    def jacobian_terms(self, t, y):
        return self.dfbar(t, y), []

    def jacobian(self, t, y):
        return sp.diags(self.dfbar(t, y))


class ConvectiveNonlinearity(Nonlinearity):
    """Quadratic term ``F(y) = y * (D y)`` with a sparse difference operator ``D``.

    Rows of ``D`` that must stay pinned are expected to be zero already.
    """

    quadratic = True

    def __init__(self, D: sp.spmatrix):
        self.D = sp.csr_matrix(D)

    def __call__(self, t, y):
        if y.ndim == 1:
            return y * (self.D @ y)
        return y * (self.D @ y.T).T

    def jacobian_terms(self, t, y):
        return self.D @ y, [(y, self.D)]

    def jacobian(self, t, y):
        return sp.diags(self.D @ y) + sp.diags(y) @ self.D


# --- systems -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Semi-discrete dynamics ``f(y, u, t) = A y + F(t, y) + G(y, u)``."""

    dim: int
    control_dim: int
    linear_part: sp.csr_matrix
    nonlinearity: Nonlinearity
    control_operator: ControlOperator
    control_bounds: tuple[float, float] = (-np.inf, np.inf)
    grid: GridSpec | None = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = sp.csr_matrix(self.linear_part)
        if A.shape != (self.dim, self.dim):
            raise ValueError(f"linear part has shape {A.shape}, expected {(self.dim, self.dim)}")
        object.__setattr__(self, "linear_part", A)
        op = self.control_operator
        if isinstance(op, Affine) and np.shape(op.B) != (self.dim, self.control_dim):
            raise ValueError("control matrix B must be d x m")
        if isinstance(op, (AffineVector, BilinearState)) and self.control_dim != 1:
            raise ValueError(f"{type(op).__name__} requires a scalar control")
        if isinstance(op, AffineVector) and np.shape(op.b) != (self.dim,):
            raise ValueError("control profile b must have length d")

    @property
    def componentwise(self) -> bool:
        return self.nonlinearity.componentwise

    def _check(self, y, u):
        if y.shape[-1] != self.dim:
            raise ValueError(f"state has dimension {y.shape[-1]}, system has {self.dim}")
        if np.size(u) != self.control_dim:
            raise ValueError(f"control has dimension {np.size(u)}, system has {self.control_dim}")

    def control_term(self, y: np.ndarray, u) -> np.ndarray:
        op = self.control_operator
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if isinstance(op, Affine):
            return np.broadcast_to(op.B @ u, y.shape).copy()
        if isinstance(op, AffineVector):
            return np.broadcast_to(u[0] * op.b, y.shape).copy()
        out = u[0] * y
        return out if op.mask is None else out * op.mask

    def rhs(self, y: np.ndarray, u, t: float) -> np.ndarray:
        self._check(y, u)
        return self.linear_part @ y + self.nonlinearity(t, y) + self.control_term(y, u)

    def rhs_batch(self, Y: np.ndarray, us: np.ndarray, t: float) -> np.ndarray:
        """Evaluate ``f`` on the rows of ``Y`` with per-row controls ``us`` (n x m)."""
        us = np.asarray(us, dtype=float).reshape(len(Y), self.control_dim)
        out = (self.linear_part @ Y.T).T + self.nonlinearity(t, Y)
        op = self.control_operator
        if isinstance(op, Affine):
            out += us @ np.asarray(op.B).T
        elif isinstance(op, AffineVector):
            out += us[:, :1] * op.b
        else:
            G = us[:, :1] * Y
            out += G if op.mask is None else G * op.mask
        return out

    def jacobian_terms(self, y: np.ndarray, u, t: float):
        """State Jacobian of ``f`` as ``A + diag(v) + sum_k diag(s_k) M_k``.

        Returns ``(v, [(s_k, M_k), ...])``, or ``None`` when the nonlinearity
        has no structured Jacobian.
        """
        terms = self.nonlinearity.jacobian_terms(t, y)
        if terms is None:
            return None
        v, scaled = terms
        return np.asarray(v, dtype=float) + self._control_diagonal(u), scaled

    def _control_diagonal(self, u) -> np.ndarray | float:
        op = self.control_operator
        if not isinstance(op, BilinearState):
            return 0.0
        u0 = float(np.atleast_1d(u)[0])
        return u0 if op.mask is None else u0 * op.mask

    def jacobian(self, y: np.ndarray, u, t: float) -> sp.csc_matrix:
        """Sparse Jacobian of ``f`` with respect to the state."""
        terms = self.jacobian_terms(y, u, t)
        if terms is None:
            JF = sp.csr_matrix(self.nonlinearity.jacobian(t, y))
            diag = np.broadcast_to(self._control_diagonal(u), (self.dim,))
            return sp.csc_matrix(self.linear_part + JF + sp.diags(diag))
        v, scaled = terms
        J = self.linear_part + sp.diags(v)
        for scale, M in scaled:
            J = J + sp.diags(scale) @ M
        return sp.csc_matrix(J)


def eval_rhs(sys: ControlSystem, y: np.ndarray, u, t: float = 0.0) -> np.ndarray:
    """Return ``A y + F(t, y) + G(y, u)``."""
    return sys.rhs(np.asarray(y, dtype=float), u, t)


# --- finite differences --------------------------------------------------------------


def laplacian_1d(n: int, h: float, boundary: Boundary) -> sp.csr_matrix:
    """Second-difference matrix on ``n`` points.

    Neumann closure mirrors the ghost point (``y[-1] = y[1]``), so every row
    sums to zero. The Dirichlet version keeps the standard stencil on all
    rows; pinning is applied later on the 2-D operator.
    """
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    L = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if boundary == "neumann":
        L[0, 1] = 2.0
        L[n - 1, n - 2] = 2.0
    return sp.csr_matrix(L) / h**2


def _first_difference_1d(n: int, h: float, scheme: str) -> sp.csr_matrix:
    if scheme == "centered":
        D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2.0 * h)
    elif scheme == "upwind":
        # forward difference: upwind for y * grad(y) when y >= 0
        D = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1]) / h
    else:
        raise ValueError(f"unknown convection scheme {scheme!r}")
    return sp.csr_matrix(D)


def _pin_rows(M: sp.spmatrix, mask: np.ndarray) -> sp.csr_matrix:
    keep = sp.diags((~mask).astype(float))
    return sp.csr_matrix(keep @ M)


def initial_condition(grid: GridSpec) -> np.ndarray:
    """``sin(pi x1) sin(pi x2)`` sampled on the grid, exactly zero on the boundary."""
    x1, x2 = grid.coordinates()
    y0 = np.sin(np.pi * x1) * np.sin(np.pi * x2)
    y0[grid.boundary_mask()] = 0.0
    return y0


def assemble_reaction_diffusion(grid: GridSpec, sigma: float = 0.1, mu: float = 5.0) -> ControlSystem:
    """``y' = sigma Lap y + mu (y^2 - y^3) + u y0`` with Neumann boundary conditions."""
    if grid.boundary != "neumann":
        raise ValueError("reaction-diffusion model requires a Neumann grid")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if grid.nx < 3:
        raise ValueError("grid needs at least 3 points per direction")
    L = laplacian_1d(grid.nx, grid.h, "neumann")
    I = sp.identity(grid.nx, format="csr")
    A = sigma * (sp.kron(I, L) + sp.kron(L, I))

    def fbar(t, y):
        return mu * (y * y - y * y * y)

    def dfbar(t, y):
        return mu * (2.0 * y - 3.0 * y * y)

    return ControlSystem(
        dim=grid.size,
        control_dim=1,
        linear_part=sp.csr_matrix(A),
        nonlinearity=ComponentwiseNonlinearity(fbar, dfbar),
        control_operator=AffineVector(initial_condition(grid)),
        control_bounds=(-2.0, 0.0),
        grid=grid,
        name="reaction_diffusion",
        meta={"sigma": sigma, "mu": mu},
    )


def assemble_burgers(grid: GridSpec, sigma: float = 0.01, convection: str = "upwind") -> ControlSystem:
    """``y' = sigma Lap y + y (D_x y + D_y y) + u y`` with Dirichlet boundary conditions.

    All ``nx * ny`` points are kept as unknowns; every term vanishes on the
    boundary rows so boundary values stay pinned at their initial value.
    """
    if grid.boundary != "dirichlet":
        raise ValueError("Burgers model requires a Dirichlet grid")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if grid.nx < 3:
        raise ValueError("grid needs at least 3 points per direction")
    mask = grid.boundary_mask()
    L = laplacian_1d(grid.nx, grid.h, "dirichlet")
    D1 = _first_difference_1d(grid.nx, grid.h, convection)
    I = sp.identity(grid.nx, format="csr")
    A = _pin_rows(sigma * (sp.kron(I, L) + sp.kron(L, I)), mask)
    D = _pin_rows(sp.kron(I, D1) + sp.kron(D1, I), mask)
    return ControlSystem(
        dim=grid.size,
        control_dim=1,
        linear_part=A,
        nonlinearity=ConvectiveNonlinearity(D),
        control_operator=BilinearState(mask=(~mask).astype(float)),
        control_bounds=(-2.0, 0.0),
        grid=grid,
        name="burgers",
        meta={"sigma": sigma, "convection": convection},
    )
