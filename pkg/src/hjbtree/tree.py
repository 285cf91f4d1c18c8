"""Leveled control trees with geometric pruning.

Level ``n + 1`` is generated by advancing every node of level ``n`` under
every discrete control. Candidates closer than ``epsilon`` to an already
accepted node of the same level are cut, and the edge that produced them
is redirected to the node that absorbed them, so every ``(node, control)``
pair keeps a successor for the backward sweep.

Nodes are stored level by level in flat arrays. A node's global id is the
offset of its level plus its position within the level.
"""

from __future__ import annotations

import bisect
import logging
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .stepper import Stepper, TimeGrid

logger = logging.getLogger(__name__)

__all__ = [
    "ControlGrid",
    "PruneParams",
    "TreeNode",
    "Level",
    "Tree",
    "TreeMemoryError",
    "equidistributed_controls",
    "prune_level",
    "build_tree",
    "cardinality",
]


class TreeMemoryError(MemoryError):
    """Tree construction ran out of memory (or exceeded its node budget)."""

    def __init__(self, levels_built: int, message: str = ""):
        self.levels_built = levels_built
        super().__init__(message or f"out of memory after {levels_built} complete levels")


@dataclass(frozen=True)
class ControlGrid:
    """Discrete control set, one row per control value."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if len(vals) == 0:
            raise ValueError("control set is empty")
        if len(np.unique(vals, axis=0)) != len(vals):
            raise ValueError("control values must be distinct")
        object.__setattr__(self, "values", vals)

    @property
    def count(self) -> int:
        return len(self.values)

    def __len__(self):
        return len(self.values)


def equidistributed_controls(n: int, lo: float = -2.0, hi: float = 0.0) -> ControlGrid:
    """``n`` equally spaced scalar controls in ``[lo, hi]``, ascending."""
    if n < 1:
        raise ValueError("need at least one control")
    if n == 1:
        return ControlGrid(np.array([lo]))
    return ControlGrid(np.linspace(lo, hi, n))


@dataclass(frozen=True)
class PruneParams:
    epsilon: float = 0.0
    strategy: Literal["sorted", "allpairs"] = "sorted"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.strategy not in ("sorted", "allpairs"):
            raise ValueError(f"unknown pruning strategy {self.strategy!r}")


@dataclass(frozen=True)
class TreeNode:
    state: np.ndarray
    parent: int | None
    control_index: int | None
    level: int


@dataclass
class Level:
    """Nodes of one time level.

    ``parent`` holds global ids, ``successors`` holds global ids of the next
    level (one column per control) and stays ``None`` on the last level.
    """

    states: np.ndarray
    parent: np.ndarray
    control: np.ndarray
    successors: np.ndarray | None = None

    def __len__(self):
        return len(self.states)


@dataclass
class Tree:
    levels: list[Level]
    controls: ControlGrid
    time: TimeGrid
    prune: PruneParams
    prune_log: list[int] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(lv) for lv in self.levels])])

    @property
    def dim(self) -> int:
        return self.levels[0].states.shape[1]

    @property
    def n_nodes(self) -> int:
        return int(sum(len(lv) for lv in self.levels))

    def locate(self, node_id: int) -> tuple[int, int]:
        """Map a global id to ``(level, position)``."""
        offs = self.offsets
        if not 0 <= node_id < offs[-1]:
            raise IndexError(f"node id {node_id} out of range")
        n = int(np.searchsorted(offs, node_id, side="right") - 1)
        return n, int(node_id - offs[n])

    def node(self, node_id: int) -> TreeNode:
        n, i = self.locate(node_id)
        lv = self.levels[n]
        if n == 0:
            return TreeNode(lv.states[i], None, None, 0)
        return TreeNode(lv.states[i], int(lv.parent[i]), int(lv.control[i]), n)

    def states(self) -> np.ndarray:
        """All node states stacked by level, one row per node."""
        return np.concatenate([lv.states for lv in self.levels], axis=0)


# --- pruning -------------------------------------------------------------------------


def _row_dist(block: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = block - x
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def scan_order(candidates: np.ndarray) -> np.ndarray:
    """Ascending first component, ties by original index."""
    return np.argsort(candidates[:, 0], kind="stable")


def _prune_allpairs(X, order, eps):
    accepted: list[int] = []
    redirect = {}
    for i in order:
        if accepted:
            hit = np.flatnonzero(_row_dist(X[accepted], X[i]) <= eps)
            if hit.size:
                redirect[int(i)] = accepted[hit[0]]
                continue
        accepted.append(int(i))
    return accepted, redirect


def _prune_sorted(X, order, eps, n_filter=16):
    """Window scan on the sort key, filtered by a partial-coordinate lower bound.

    Both the first component and any subset of coordinates give lower bounds
    on the Euclidean distance, so survivors outside the key window or far in
    the filter coordinates can be skipped without changing the outcome.
    """
    n, d = X.shape
    if d > n_filter:
        var = X.var(axis=0)
        cols = np.sort(np.argsort(-var, kind="stable")[:n_filter])
        P = np.ascontiguousarray(X[:, cols])
    else:
        P = X
    slack = eps * (1.0 + 1e-9) + 1e-300
    keys: list[float] = []
    acc_idx = np.empty(n, dtype=np.int64)
    acc_proj = np.empty((n, P.shape[1]))
    s = 0
    redirect = {}
    for i in order:
        k = X[i, 0]
        lo = bisect.bisect_left(keys, k - slack)
        if lo < s:
            near = lo + np.flatnonzero(_row_dist(acc_proj[lo:s], P[i]) <= slack)
            if near.size:
                hit = np.flatnonzero(_row_dist(X[acc_idx[near]], X[i]) <= eps)
                if hit.size:
                    redirect[int(i)] = int(acc_idx[near[hit[0]]])
                    continue
        keys.append(k)
        acc_idx[s] = i
        acc_proj[s] = P[i]
        s += 1
    return [int(j) for j in acc_idx[:s]], redirect


def _prune_exact(X, order):
    # zero tolerance: only bit-identical states merge (+0.0 folds -0.0)
    seen = {}
    accepted = []
    redirect = {}
    Xn = X + 0.0
    for i in order:
        key = Xn[i].tobytes()
        j = seen.get(key)
        if j is None:
            seen[key] = int(i)
            accepted.append(int(i))
        else:
            redirect[int(i)] = j
    return accepted, redirect


def prune_level(candidates: np.ndarray, epsilon: float = 0.0, strategy: str = "sorted"):
    """Cut candidates lying within ``epsilon`` of an earlier accepted one.

    Candidates are scanned by ascending first component (ties by index).

    Returns
    -------
    survivors : list of int
        Candidate indices kept, in scan order.
    redirect : dict
        Maps every cut index to the first survivor (in scan order) that
        absorbed it.
    """
    X = np.asarray(candidates, dtype=float)
    if X.ndim != 2:
        raise ValueError("candidates must be a 2-D array (one state per row)")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if len(X) == 0:
        return [], {}
    order = scan_order(X)
    if strategy == "allpairs":
        return _prune_allpairs(X, order, epsilon)
    if strategy != "sorted":
        raise ValueError(f"unknown pruning strategy {strategy!r}")
    if epsilon == 0.0:
        return _prune_exact(X, order)
    return _prune_sorted(X, order, epsilon)


# --- construction --------------------------------------------------------------------


def build_tree(
    sys,
    stepper: Stepper,
    x0: np.ndarray,
    controls: ControlGrid,
    time_grid: TimeGrid,
    prune: PruneParams = PruneParams(),
    max_nodes: int | None = None,
) -> Tree:
    """Grow the control tree from ``x0`` over ``time_grid.n_steps`` levels.

    Candidate ``p * M + j`` is the child of level position ``p`` under control
    ``j``. ``max_nodes`` caps the total node count; exceeding it (or running
    out of memory) raises :class:`TreeMemoryError`.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dim,):
        raise ValueError(f"initial state has shape {x0.shape}, system dimension is {sys.dim}")
    M = controls.count
    root = Level(x0[None, :].copy(), np.array([-1]), np.array([-1]))
    tree = Tree([root], controls, time_grid, prune, prune_log=[0])
    t_step = t_prune = 0.0
    offset = 1
    for n in range(time_grid.n_steps):
        parent_level = tree.levels[-1]
        s = len(parent_level)
        try:
            if max_nodes is not None and offset + s * M > max_nodes:
                raise MemoryError(f"node budget {max_nodes} exceeded at level {n + 1}")
            tic = time.perf_counter()
            parents = np.repeat(parent_level.states, M, axis=0)
            us = np.tile(controls.values, (s, 1))
            cand = stepper.step_many(sys, parents, us, time_grid.t(n), time_grid.dt)
            del parents
            t_step += time.perf_counter() - tic
            tic = time.perf_counter()
            survivors, redirect = prune_level(cand, prune.epsilon, prune.strategy)
            t_prune += time.perf_counter() - tic
            pos = np.empty(len(cand), dtype=np.int64)
            surv = np.asarray(survivors, dtype=np.int64)
            pos[surv] = np.arange(len(surv))
            for cut, target in redirect.items():
                pos[cut] = pos[target]
            parent_level.successors = (offset + pos).reshape(s, M)
            parent_offset = offset - s
            level = Level(
                cand[surv],
                parent_offset + surv // M,
                surv % M,
            )
            del cand
        except MemoryError as exc:
            raise TreeMemoryError(n, f"tree construction stopped after {n} complete levels: {exc}") from exc
        tree.levels.append(level)
        tree.prune_log.append(len(redirect))
        offset += len(level)
        logger.debug("level %d: %d nodes (%d cut)", n + 1, len(level), len(redirect))
    tree.timings = {"step": t_step, "prune": t_prune}
    return tree


def cardinality(tree: Tree) -> tuple[list[int], int]:
    """Per-level node counts and their total."""
    counts = [len(lv) for lv in tree.levels]
    return counts, int(sum(counts))
