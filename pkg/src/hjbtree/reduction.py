"""POD bases from tree snapshots, DEIM, and reduced-order dynamics.

Three treatments of the nonlinearity are available on the reduced
coordinates ``a`` (state ``y ~ Psi a``):

``full_lift``
    ``Psi^T F(t, Psi a)``; exact Galerkin projection, cost grows with ``d``.
``deim``
    ``Psi^T Phi (S^T Phi)^{-1} Fbar(t, (Psi a)[points])`` for componentwise ``F``.
``tensor``
    ``sum_{q,r} T[:, q, r] a_q a_r`` for the quadratic convective term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg as sla

from .cost import CostFunctional, QuadraticTrackingCost
from .model import (
    Affine,
    AffineVector,
    BilinearState,
    ComponentwiseNonlinearity,
    ControlSystem,
    ConvectiveNonlinearity,
)
from .stepper import Stepper, TimeGrid
from .tree import ControlGrid, PruneParams, Tree, build_tree

logger = logging.getLogger(__name__)

__all__ = [
    "SnapshotSet",
    "PodBasis",
    "DeimOperator",
    "ReducedSystem",
    "DeimSelectionError",
    "collect_snapshots",
    "constant_control_snapshots",
    "compute_pod",
    "select_deim_points",
    "build_deim",
    "deim_apply",
    "reduce_system",
    "reduced_cost",
    "build_reduced_tree",
]

# singular values below this fraction of the largest count as zero
RANK_CUTOFF = 1e-14


class DeimSelectionError(np.linalg.LinAlgError):
    pass


@dataclass
class SnapshotSet:
    """Column-stacked states with the time of each column."""

    matrix: np.ndarray
    times: np.ndarray
    source: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.matrix.shape[1]


def collect_snapshots(tree: Tree) -> SnapshotSet:
    """Every node state as a column, ordered by level then position."""
    if tree.n_nodes == 0:
        raise ValueError("tree is empty")
    Y = np.ascontiguousarray(tree.states().T)
    times = np.concatenate([np.full(len(lv), tree.time.t(n)) for n, lv in enumerate(tree.levels)])
    source = {"dt": tree.time.dt, "controls": tree.controls.values.ravel().tolist(), "epsilon": tree.prune.epsilon}
    return SnapshotSet(Y, times, source)


def constant_control_snapshots(sys, stepper: Stepper, x0, controls: ControlGrid, time_grid: TimeGrid) -> SnapshotSet:
    """Snapshots from one rollout per control held constant over the horizon."""
    N = time_grid.n_steps
    X = np.repeat(np.asarray(x0, dtype=float)[None, :], controls.count, axis=0)
    cols, times = [X], [np.full(controls.count, time_grid.t(0))]
    for n in range(N):
        X = stepper.step_many(sys, X, controls.values, time_grid.t(n), time_grid.dt)
        cols.append(X)
        times.append(np.full(controls.count, time_grid.t(n + 1)))
    Y = np.ascontiguousarray(np.concatenate(cols).T)
    return SnapshotSet(Y, np.concatenate(times), {"dt": time_grid.dt, "controls": controls.values.ravel().tolist(),
                                                  "constant": True})


@dataclass
class PodBasis:
    basis: np.ndarray
    singular_values: np.ndarray

    @property
    def rank_kept(self) -> int:
        return self.basis.shape[1]

    @property
    def energy(self) -> float:
        return energy(self.singular_values, self.rank_kept)

    def tail(self, ell: int | None = None) -> float:
        """``(sum_{i > ell} sigma_i^2)^{1/2}``, the truncation term of the error bound."""
        ell = self.rank_kept if ell is None else ell
        return float(np.sqrt(np.sum(self.singular_values[ell:] ** 2)))

    def project(self, Y):
        """Reduced coordinates of a state ``(d,)`` or of state rows ``(n, d)``."""
        return np.asarray(Y) @ self.basis

    def lift(self, a):
        a = np.asarray(a)
        return a @ self.basis.T if a.ndim == 2 else self.basis @ a

    def truncate(self, ell: int) -> "PodBasis":
        if not 1 <= ell <= self.basis.shape[1]:
            raise ValueError(f"cannot keep {ell} of {self.basis.shape[1]} modes")
        return PodBasis(self.basis[:, :ell].copy(), self.singular_values)


def energy(sigma: np.ndarray, ell: int) -> float:
    s2 = np.asarray(sigma) ** 2
    return float(np.sum(s2[:ell]) / np.sum(s2))


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive, for reproducible files
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def compute_pod(snapshots, energy_threshold: float | None = 0.999, rank: int | None = None) -> PodBasis:
    """Left singular vectors of the snapshot matrix.

    ``rank`` fixes the number of modes; otherwise the smallest rank whose
    energy reaches ``energy_threshold`` is kept. Numerically zero singular
    values (``< 1e-14 sigma_1``) never count towards the rank.
    """
    Y = snapshots.matrix if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ValueError("snapshot matrix must be 2-D with at least one column")
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    if s[0] <= np.finfo(float).tiny or not np.isfinite(s[0]):
        raise ValueError("snapshot matrix is numerically zero")
    numerical_rank = int(np.sum(s >= RANK_CUTOFF * s[0]))
    if rank is None:
        if energy_threshold is None or not 0 < energy_threshold <= 1:
            raise ValueError("energy threshold must lie in (0, 1]")
        if energy_threshold == 1:
            # tails below ~1e-8 sigma_1 vanish from the cumulative energy in floating point
            ell = numerical_rank
        else:
            cum = np.cumsum(s**2) / np.sum(s**2)
            ell = min(int(np.searchsorted(cum, energy_threshold * (1 - 1e-15)) + 1), numerical_rank)
    else:
        ell = int(rank)
        if ell < 1 or ell > len(s):
            raise ValueError(f"rank {rank} outside [1, {len(s)}]")
    return PodBasis(_fix_signs(U[:, :ell]), s)


# --- DEIM ----------------------------------------------------------------------------


def select_deim_points(nl_basis: np.ndarray, method: Literal["greedy", "qr"] = "greedy") -> np.ndarray:
    """Interpolation indices for the columns of ``nl_basis``.

    The greedy rule takes the largest entry of the first column, then the
    largest entry of each next column's interpolation residual; ties go to
    the lowest index. ``method="qr"`` uses column-pivoted QR of the transpose.
    """
    Phi = np.asarray(nl_basis, dtype=float)
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    d, k = Phi.shape
    if k > d:
        raise DeimSelectionError(f"cannot pick {k} points out of {d}")
    if method == "qr":
        _, _, piv = sla.qr(Phi.T, pivoting=True, mode="economic")
        pts = np.asarray(piv[:k], dtype=np.int64)
    elif method == "greedy":
        pts = [int(np.argmax(np.abs(Phi[:, 0])))]
        for j in range(1, k):
            S = np.asarray(pts)
            try:
                c = np.linalg.solve(Phi[S, :j], Phi[S, j])
            except np.linalg.LinAlgError as exc:
                raise DeimSelectionError(f"singular interpolation system at step {j}") from exc
            r = Phi[:, j] - Phi[:, :j] @ c
            pts.append(int(np.argmax(np.abs(r))))
        pts = np.asarray(pts, dtype=np.int64)
    else:
        raise ValueError(f"unknown DEIM selection {method!r}")
    if len(np.unique(pts)) != k:
        raise DeimSelectionError("repeated interpolation index; basis columns are dependent")
    if abs(np.linalg.det(Phi[pts])) == 0.0 or np.linalg.cond(Phi[pts]) > 1e14:
        raise DeimSelectionError("interpolation matrix is singular")
    return pts


@dataclass
class DeimOperator:
    nl_basis: np.ndarray
    points: np.ndarray
    projector: np.ndarray
    sampled_basis: np.ndarray
    conditioning: float
    nl_singular_values: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.points)

    def interpolate(self, F_samples: np.ndarray) -> np.ndarray:
        """Full-space DEIM reconstruction ``Phi (S^T Phi)^{-1} S^T F`` of sampled values."""
        return self.nl_basis @ np.linalg.solve(self.nl_basis[self.points], F_samples)


def make_deim_operator(nl_basis, basis, method="greedy", nl_singular_values=None) -> DeimOperator:
    Phi = np.asarray(nl_basis, dtype=float)
    Psi = basis.basis if isinstance(basis, PodBasis) else np.asarray(basis)
    pts = select_deim_points(Phi, method)
    SPhi_inv = np.linalg.inv(Phi[pts])
    projector = Psi.T @ Phi @ SPhi_inv
    return DeimOperator(
        nl_basis=Phi,
        points=pts,
        projector=projector,
        sampled_basis=np.ascontiguousarray(Psi[pts]),
        conditioning=float(np.linalg.norm(SPhi_inv, 2)),
        nl_singular_values=nl_singular_values,
    )


def nonlinear_snapshots(sys: ControlSystem, snapshots: SnapshotSet) -> np.ndarray:
    """``F(t_j, y_j)`` for every snapshot column."""
    Y = snapshots.matrix
    times = np.unique(snapshots.times)
    out = np.empty_like(Y)
    for t in times:
        sel = snapshots.times == t
        out[:, sel] = sys.nonlinearity(t, Y[:, sel].T).T
    return out


def build_deim(sys: ControlSystem, basis: PodBasis, snapshots: SnapshotSet, k: int, method="greedy") -> DeimOperator:
    """DEIM operator from the nonlinearity evaluated at the state snapshots."""
    if not sys.componentwise:
        raise ValueError("DEIM needs a componentwise nonlinearity")
    Fs = nonlinear_snapshots(sys, snapshots)
    nl = compute_pod(Fs, rank=k)
    return make_deim_operator(nl.basis, basis, method, nl.singular_values)


def deim_apply(op: DeimOperator, sys: ControlSystem, reduced_state: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Reduced DEIM nonlinearity, evaluating ``Fbar`` at the selected rows only."""
    if not sys.componentwise:
        raise ValueError("DEIM needs a componentwise nonlinearity; use 'tensor' or 'full_lift'")
    a = np.asarray(reduced_state, dtype=float)
    z = a @ op.sampled_basis.T
    return sys.nonlinearity.fbar(t, z) @ op.projector.T


# --- reduced dynamics ----------------------------------------------------------------


class ReducedSystem:
    """Dense ``l``-dimensional dynamics ``A_l a + N(t, a) + G_l(a, u)``.

    Exposes the same ``rhs``/``jacobian`` interface as :class:`ControlSystem`
    plus batched versions, which the stepper uses for vectorized Newton.
    """

    batched = True

    def __init__(self, full: ControlSystem, basis: PodBasis, strategy: str, deim: DeimOperator | None = None):
        Psi = basis.basis
        self.full = full
        self.basis = basis
        self.strategy = strategy
        self.deim = deim
        self.dim = basis.rank_kept
        self.control_dim = full.control_dim
        self.linear_part = Psi.T @ (full.linear_part @ Psi)
        op = full.control_operator
        self._bilinear = None
        self._affine = None
        if isinstance(op, Affine):
            self._affine = Psi.T @ np.asarray(op.B)
        elif isinstance(op, AffineVector):
            self._affine = (Psi.T @ op.b)[:, None]
        else:
            G = Psi.T @ Psi if op.mask is None else Psi.T @ (op.mask[:, None] * Psi)
            # snapshots vanish on pinned rows, so the projected mask is the identity
            self._bilinear = None if np.allclose(G, np.eye(self.dim), rtol=0, atol=1e-12) else G
        self.bilinear = isinstance(op, BilinearState)
        nl = full.nonlinearity
        if strategy == "deim":
            if deim is None:
                raise ValueError("DEIM strategy needs a DeimOperator")
            if not nl.componentwise:
                raise ValueError("DEIM needs a componentwise nonlinearity")
        elif strategy == "tensor":
            if not isinstance(nl, ConvectiveNonlinearity):
                raise ValueError("tensor strategy needs the quadratic convective nonlinearity")
            DPsi = nl.D @ Psi
            self.tensor = np.einsum("ip,iq,ir->pqr", Psi, Psi, DPsi, optimize=True)
        elif strategy == "full_lift":
            if isinstance(nl, ConvectiveNonlinearity):
                self._DPsi = nl.D @ Psi
        else:
            raise ValueError(f"unknown reduction strategy {strategy!r}")

    # nonlinearity ---------------------------------------------------------------

    def nonlinear(self, t, A):
        A = np.asarray(A, dtype=float)
        Psi = self.basis.basis
        if self.strategy == "full_lift":
            Y = A @ Psi.T
            return self.full.nonlinearity(t, Y) @ Psi
        if self.strategy == "deim":
            return deim_apply(self.deim, self.full, A, t)
        return np.einsum("pqr,...q,...r->...p", self.tensor, A, A)

    def nonlinear_jacobian_batch(self, t, A):
        Psi = self.basis.basis
        nl = self.full.nonlinearity
        if self.strategy == "deim":
            op = self.deim
            Z = A @ op.sampled_basis.T
            dF = nl.dfbar(t, Z)
            return np.einsum("pk,nk,kl->npl", op.projector, dF, op.sampled_basis, optimize=True)
        if self.strategy == "tensor":
            T = self.tensor
            return np.einsum("pjr,nr->npj", T, A) + np.einsum("pqj,nq->npj", T, A)
        Y = A @ Psi.T
        if nl.componentwise:
            return np.einsum("ip,ni,iq->npq", Psi, nl.dfbar(t, Y), Psi, optimize=True)
        if isinstance(nl, ConvectiveNonlinearity):
            DY = (nl.D @ Y.T).T
            return np.einsum("ip,ni,iq->npq", Psi, DY, Psi, optimize=True) + np.einsum(
                "ip,ni,iq->npq", Psi, Y, self._DPsi, optimize=True
            )
        out = np.empty((len(A), self.dim, self.dim))
        for i, y in enumerate(Y):
            J = nl.jacobian(t, y)
            out[i] = Psi.T @ (J @ Psi)
        return out

    # control term -----------------------------------------------------------------

    def _control_batch(self, A, us):
        if self._affine is not None:
            return us @ self._affine.T
        u = us[:, :1]
        return u * A if self._bilinear is None else u * (A @ self._bilinear.T)

    # interface ---------------------------------------------------------------------

    def rhs_batch(self, A, us, t):
        A = np.asarray(A, dtype=float)
        us = np.asarray(us, dtype=float).reshape(len(A), self.control_dim)
        return A @ self.linear_part.T + self.nonlinear(t, A) + self._control_batch(A, us)

    def rhs(self, a, u, t):
        a = np.asarray(a, dtype=float)
        if a.shape != (self.dim,):
            raise ValueError(f"reduced state has shape {a.shape}, expected ({self.dim},)")
        return self.rhs_batch(a[None, :], np.atleast_1d(u)[None, :], t)[0]

    def jacobian_batch(self, A, us, t):
        A = np.asarray(A, dtype=float)
        us = np.asarray(us, dtype=float).reshape(len(A), self.control_dim)
        J = self.linear_part[None, :, :] + self.nonlinear_jacobian_batch(t, A)
        if self.bilinear:
            G = np.eye(self.dim) if self._bilinear is None else self._bilinear
            J = J + us[:, 0, None, None] * G
        return J

    def jacobian(self, a, u, t):
        return self.jacobian_batch(np.asarray(a, dtype=float)[None, :], np.atleast_1d(u)[None, :], t)[0]


def reduce_system(
    sys: ControlSystem,
    basis: PodBasis,
    strategy: Literal["full_lift", "deim", "tensor"] = "full_lift",
    deim: DeimOperator | None = None,
) -> ReducedSystem:
    """Galerkin projection of ``sys`` onto the columns of ``basis``."""
    return ReducedSystem(sys, basis, strategy, deim)


def reduced_cost(cf: CostFunctional, basis: PodBasis) -> CostFunctional:
    """Cost on reduced coordinates, ``L(Psi a, u, t)`` and ``g(Psi a)``."""
    if isinstance(cf, QuadraticTrackingCost):
        return cf.reduced(basis)
    return lifted_cost(cf, basis)


def lifted_cost(cf: CostFunctional, basis: PodBasis) -> CostFunctional:
    """Reduced cost evaluated by explicit lifting (reference for :func:`reduced_cost`)."""
    Psi = basis.basis
    return CostFunctional(
        lambda A, u, t=0.0: cf.running(np.asarray(A) @ Psi.T, u, t),
        lambda A: cf.final(np.asarray(A) @ Psi.T),
        cf.discount,
    )


def build_reduced_tree(
    reduced_sys: ReducedSystem,
    stepper: Stepper,
    x0_full: np.ndarray,
    controls: ControlGrid,
    time_grid: TimeGrid,
    prune: PruneParams = PruneParams(),
    max_nodes: int | None = None,
) -> Tree:
    """Tree on POD coordinates rooted at ``Psi^T x0``."""
    a0 = reduced_sys.basis.basis.T @ np.asarray(x0_full, dtype=float)
    return build_tree(reduced_sys, stepper, a0, controls, time_grid, prune, max_nodes=max_nodes)
