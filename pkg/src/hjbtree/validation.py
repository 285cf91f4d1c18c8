"""Independent oracles and empirical convergence checks for tree solvers."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .cost import CostFunctional, accumulate_cost
from .reduction import PodBasis, build_reduced_tree, compute_pod, reduce_system, reduced_cost
from .stepper import Stepper, TimeGrid
from .tree import ControlGrid, PruneParams, Tree, build_tree
from .value import backward_sweep, closed_loop_rollout

__all__ = [
    "BudgetExceeded",
    "ErrorReport",
    "brute_force_value",
    "path_codes",
    "tree_error",
    "convergence_study",
    "pruning_study",
    "fit_constant",
]


class BudgetExceeded(ValueError):
    pass


@dataclass
class ErrorReport:
    per_level: list[float]
    aggregate: float
    params: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def brute_force_value(sys, stepper: Stepper, x0, controls: ControlGrid, time_grid: TimeGrid,
                      cf: CostFunctional, budget: int = 100_000) -> tuple[float, tuple[int, ...]]:
    """Minimum cost over every open-loop control sequence, by plain enumeration.

    Each sequence is integrated from scratch; nothing is shared with the tree.
    Returns the minimum and the first minimizing index sequence.
    """
    M, N = controls.count, time_grid.n_steps
    if M**N > budget:
        raise BudgetExceeded(f"{M}^{N} = {M**N} sequences exceeds the budget of {budget}")
    best, arg = np.inf, None
    for seq in itertools.product(range(M), repeat=N):
        us = controls.values[list(seq)] if N else controls.values[:0]
        traj = closed_loop_rollout(sys, stepper, x0, us, time_grid)
        J = accumulate_cost(traj, us, cf, time_grid)
        if J < best:
            best, arg = J, seq
    return float(best), arg


def path_codes(tree: Tree) -> list[np.ndarray]:
    """Base-``M`` integer encoding of each node's control path from the root."""
    M = tree.controls.count
    offs = tree.offsets
    codes = [np.zeros(1, dtype=np.int64)]
    for n in range(1, len(tree.levels)):
        lv = tree.levels[n]
        codes.append(codes[n - 1][lv.parent - offs[n - 1]] * M + lv.control)
    return codes


def tree_error(full_tree: Tree, reduced_tree: Tree, basis: PodBasis) -> ErrorReport:
    """Relative Euclidean error between a full tree and the lift of a reduced one.

    Nodes are matched by control path, which requires both trees to be
    unpruned. Level ``n`` error is ``(sum ||z - Psi a||^2 / sum ||z||^2)^{1/2}``;
    the aggregate is the maximum over levels.
    """
    if full_tree.controls.count != reduced_tree.controls.count or len(full_tree.levels) != len(reduced_tree.levels):
        raise ValueError("trees differ in control count or depth")
    if any(full_tree.prune_log) or any(reduced_tree.prune_log):
        raise ValueError("tree error needs unpruned trees so paths can be matched")
    cf, cr = path_codes(full_tree), path_codes(reduced_tree)
    per_level = []
    for n, (lf, lr) in enumerate(zip(full_tree.levels, reduced_tree.levels)):
        if len(lf) != len(lr):
            raise ValueError(f"level {n} sizes differ ({len(lf)} vs {len(lr)})")
        of, orr = np.argsort(cf[n]), np.argsort(cr[n])
        if not np.array_equal(cf[n][of], cr[n][orr]):
            raise ValueError(f"level {n} holds different control paths")
        Z = lf.states[of]
        diff = Z - basis.lift(lr.states[orr])
        num = np.einsum("ij,ij->", diff, diff)
        den = np.einsum("ij,ij->", Z, Z)
        per_level.append(float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num)))
    return ErrorReport(per_level, max(per_level), {"l": basis.rank_kept, "dt": full_tree.time.dt,
                                                   "M": full_tree.controls.count})


def fit_constant(errors, scales) -> float:
    """Least-squares ``C`` in ``error ~ C * scale`` (line through the origin)."""
    e, x = np.asarray(errors, float), np.asarray(scales, float)
    return float(e @ x / (x @ x))


def convergence_study(sys, stepper: Stepper, x0, controls: ControlGrid, cf: CostFunctional,
                      t0: float, T: float, dts, ells, snapshot_tree: Tree, dt_ref: float,
                      prune: PruneParams = PruneParams(), strategy: str = "full_lift") -> dict:
    """Root-value error of reduced trees against a fine full-dynamics reference.

    For every ``(l, dt)`` pair the reduced value ``V^{l,dt}(root)`` is compared
    with the full-tree value at ``dt_ref``. ``C`` is fitted by least squares
    in ``error ~ C (Err(l) + dt)``.
    """
    tic = time.perf_counter()
    ref_tree = build_tree(sys, stepper, x0, controls, TimeGrid(t0, T, dt_ref), prune)
    v_ref = backward_sweep(ref_tree, cf).root_value
    del ref_tree
    pod_full = compute_pod(snapshot_tree_snapshots(snapshot_tree), rank=max(ells))
    rows = []
    for dt in dts:
        tg = TimeGrid(t0, T, dt)
        full_dt = backward_sweep(build_tree(sys, stepper, x0, controls, tg, prune), cf).root_value
        for ell in ells:
            basis = pod_full.truncate(ell)
            rsys = reduce_system(sys, basis, strategy)
            rt = build_reduced_tree(rsys, stepper, x0, controls, tg, prune)
            v = backward_sweep(rt, reduced_cost(cf, basis)).root_value
            rows.append({"l": ell, "dt": dt, "err_l": basis.tail(ell), "value": v, "full_value": full_dt,
                         "error": abs(v - v_ref)})
    C = fit_constant([r["error"] for r in rows], [r["err_l"] + r["dt"] for r in rows])
    for r in rows:
        r["bound"] = C * (r["err_l"] + r["dt"])
    return {"reference": v_ref, "dt_ref": dt_ref, "C": C, "rows": rows,
            "seconds": time.perf_counter() - tic}


def snapshot_tree_snapshots(tree: Tree):
    from .reduction import collect_snapshots

    return collect_snapshots(tree)


def pruning_study(sys, stepper: Stepper, x0, controls: ControlGrid, time_grid: TimeGrid, cf: CostFunctional,
                  epsilons=(1e-1, 1e-2, 1e-3, 0.0)) -> list[dict]:
    """Root value and tree size for a decreasing sequence of pruning thresholds."""
    base_tree = build_tree(sys, stepper, x0, controls, time_grid, PruneParams(0.0))
    base, base_nodes = backward_sweep(base_tree, cf).root_value, base_tree.n_nodes
    del base_tree
    out = []
    for eps in epsilons:
        if eps == 0:
            v, nodes = base, base_nodes
        else:
            tr = build_tree(sys, stepper, x0, controls, time_grid, PruneParams(eps))
            v, nodes = backward_sweep(tr, cf).root_value, tr.n_nodes
        out.append({"epsilon": eps, "nodes": nodes, "value": v, "gap": abs(v - base)})
    return out
