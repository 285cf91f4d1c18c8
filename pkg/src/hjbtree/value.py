"""Backward dynamic-programming sweep on a tree and feedback synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostFunctional
from .stepper import Stepper
from .tree import Tree

__all__ = [
    "ValueFunction",
    "TreeStructureError",
    "backward_sweep",
    "synthesize_control",
    "closed_loop_rollout",
    "check_recursion",
]


class TreeStructureError(ValueError):
    """A node lacks a successor for some control."""


@dataclass
class ValueFunction:
    """Per-level node values and minimizing control indices.

    ``argmin[n][i]`` is the control index chosen at node ``i`` of level ``n``;
    the last level has no entry.
    """

    values: list[np.ndarray]
    argmin: list[np.ndarray]

    @property
    def root_value(self) -> float:
        return float(self.values[0][0])

    def flat_values(self) -> np.ndarray:
        return np.concatenate(self.values)


def _stage_costs(states, cf: CostFunctional, controls, t, dt):
    return np.stack([dt * np.asarray(cf.running(states, u, t), dtype=float) for u in controls], axis=1)


def backward_sweep(tree: Tree, cf: CostFunctional) -> ValueFunction:
    """Minimize over the discrete controls level by level, from the leaves up.

    Ties go to the lowest control index.
    """
    N = len(tree.levels) - 1
    dt = tree.time.dt
    disc = np.exp(-cf.discount * dt)
    offs = tree.offsets
    last = tree.levels[N]
    V = [None] * (N + 1)
    A = [None] * N
    V[N] = np.asarray(cf.final(last.states), dtype=float).reshape(len(last))
    for n in range(N - 1, -1, -1):
        lv = tree.levels[n]
        if lv.successors is None or lv.successors.shape != (len(lv), tree.controls.count):
            raise TreeStructureError(f"level {n} has no successor table for every control")
        local = lv.successors - offs[n + 1]
        if local.min() < 0 or local.max() >= len(tree.levels[n + 1]):
            raise TreeStructureError(f"level {n} points outside level {n + 1}")
        q = disc * V[n + 1][local] + _stage_costs(lv.states, cf, tree.controls.values, tree.time.t(n), dt)
        A[n] = np.argmin(q, axis=1)
        V[n] = q[np.arange(len(lv)), A[n]]
    return ValueFunction(V, A)


def check_recursion(tree: Tree, cf: CostFunctional, vf: ValueFunction) -> float:
    """Largest violation of the dynamic-programming recursion over all nodes."""
    dt = tree.time.dt
    disc = np.exp(-cf.discount * dt)
    offs = tree.offsets
    N = len(tree.levels) - 1
    worst = float(np.max(np.abs(vf.values[N] - np.asarray(cf.final(tree.levels[N].states)))))
    for n in range(N):
        lv = tree.levels[n]
        for i in range(len(lv)):
            best = min(
                disc * vf.values[n + 1][lv.successors[i, j] - offs[n + 1]]
                + dt * float(cf.running(lv.states[i], u, tree.time.t(n)))
                for j, u in enumerate(tree.controls.values)
            )
            worst = max(worst, abs(best - vf.values[n][i]))
    return worst


def synthesize_control(tree: Tree, vf: ValueFunction):
    """Follow the stored minimizers from the root.

    Returns the control values ``(N, m)``, their indices and the global ids
    of the visited nodes (``N + 1`` of them).
    """
    offs = tree.offsets
    N = len(tree.levels) - 1
    pos = 0
    path = [0]
    idx = []
    for n in range(N):
        j = int(vf.argmin[n][pos])
        nxt = int(tree.levels[n].successors[pos, j])
        idx.append(j)
        path.append(nxt)
        pos = nxt - offs[n + 1]
    idx = np.asarray(idx, dtype=np.int64)
    return tree.controls.values[idx], idx, np.asarray(path, dtype=np.int64)


def closed_loop_rollout(sys, stepper: Stepper, x0, controls, time_grid) -> np.ndarray:
    """Integrate ``sys`` from ``x0`` under a control sequence; returns ``N + 1`` states."""
    controls = np.asarray(controls, dtype=float).reshape(len(controls), -1)
    if len(controls) != time_grid.n_steps:
        raise ValueError(f"got {len(controls)} controls for {time_grid.n_steps} steps")
    traj = np.empty((time_grid.n_steps + 1, sys.dim))
    traj[0] = x0
    for n in range(time_grid.n_steps):
        # same batched entry point as tree growth, so unpruned paths match bit for bit
        traj[n + 1] = stepper.step_many(sys, traj[n][None, :], controls[n][None, :], time_grid.t(n), time_grid.dt)[0]
    return traj
