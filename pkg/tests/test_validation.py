import numpy as np
import pytest

from conftest import scalar_system
from hjbtree.cost import CostFunctional, accumulate_cost
from hjbtree.reduction import PodBasis, build_reduced_tree, collect_snapshots, compute_pod, reduce_system
from hjbtree.stepper import Stepper, TimeGrid
from hjbtree.tree import ControlGrid, PruneParams, build_tree, equidistributed_controls
from hjbtree.validation import (
    BudgetExceeded,
    brute_force_value,
    convergence_study,
    fit_constant,
    path_codes,
    pruning_study,
    tree_error,
)
from hjbtree.value import backward_sweep, closed_loop_rollout


def test_brute_force_single_control(toy):
    tg = TimeGrid(0, 0.4, 0.1)
    v, seq = brute_force_value(toy["sys"], toy["stepper"], toy["x0"], ControlGrid([-1.0]), tg, toy["cost"])
    us = np.full((4, 1), -1.0)
    traj = closed_loop_rollout(toy["sys"], toy["stepper"], toy["x0"], us, tg)
    assert v == accumulate_cost(traj, us, toy["cost"], tg) and seq == (0, 0, 0, 0)


def test_brute_force_constant_final_cost():
    cf = CostFunctional(lambda y, u, t=0.0: 0.0, lambda y: 2.5)
    v, _ = brute_force_value(scalar_system(), Stepper(), np.array([1.0]), equidistributed_controls(3),
                             TimeGrid(0, 0.3, 0.1), cf)
    assert v == 2.5


def test_brute_force_budget(toy):
    with pytest.raises(BudgetExceeded):
        brute_force_value(toy["sys"], toy["stepper"], toy["x0"], equidistributed_controls(3),
                          TimeGrid(0, 1.1, 0.1), toy["cost"])


@pytest.mark.parametrize("M,N", [(1, 3), (2, 4), (3, 3), (2, 6)])
def test_oracle_equivalence(toy, M, N):
    U, tg = equidistributed_controls(M), TimeGrid(0, N * 0.1, 0.1)
    tr = build_tree(toy["sys"], toy["stepper"], toy["x0"], U, tg)
    v = backward_sweep(tr, toy["cost"]).root_value
    b, _ = brute_force_value(toy["sys"], toy["stepper"], toy["x0"], U, tg, toy["cost"])
    assert abs(v - b) <= 1e-12 * abs(b)


def test_path_codes_are_a_bijection(toy):
    tr = build_tree(toy["sys"], toy["stepper"], toy["x0"], equidistributed_controls(3), TimeGrid(0, 0.4, 0.1))
    for n, c in enumerate(path_codes(tr)):
        assert sorted(c.tolist()) == list(range(3**n))


def test_tree_error_full_rank_explicit(toy):
    s, st_ = toy["sys"], Stepper("explicit")
    U, tg = equidistributed_controls(2), TimeGrid(0, 0.4, 0.1)
    full = build_tree(s, st_, toy["x0"], U, tg)
    Q = np.linalg.qr(np.random.default_rng(0).normal(size=(s.dim, s.dim)))[0]
    basis = PodBasis(Q, np.ones(s.dim))
    red = build_reduced_tree(reduce_system(s, basis, "full_lift"), st_, toy["x0"], U, tg)
    rep = tree_error(full, red, basis)
    assert rep.aggregate <= 1e-8 and len(rep.per_level) == 5


def test_tree_error_at_snapshot_rank(toy):
    s = toy["sys"]
    tight = Stepper("implicit", type(toy["stepper"].newton)(1e-12))
    U, tg = equidistributed_controls(2), TimeGrid(0, 0.3, 0.1)
    full = build_tree(s, tight, toy["x0"], U, tg)
    basis = compute_pod(collect_snapshots(full), 1.0)
    red = build_reduced_tree(reduce_system(s, basis, "full_lift"), tight, toy["x0"], U, tg)
    assert tree_error(full, red, basis).aggregate <= 1e-6


def test_tree_error_decreases_with_rank(toy):
    s, st_ = toy["sys"], toy["stepper"]
    U, tg = equidistributed_controls(2), TimeGrid(0, 0.6, 0.1)
    full = build_tree(s, st_, toy["x0"], U, tg)
    pod = compute_pod(collect_snapshots(full), rank=10)
    aggs = []
    for ell in (2, 4, 6, 8, 10):
        b = pod.truncate(ell)
        red = build_reduced_tree(reduce_system(s, b, "full_lift"), st_, toy["x0"], U, tg)
        aggs.append(tree_error(full, red, b).aggregate)
    assert all(b <= a for a, b in zip(aggs, aggs[1:]))


def test_tree_error_rejects_pruned(toy):
    s = toy["sys"]
    U, tg = equidistributed_controls(3), TimeGrid(0, 1.0, 0.1)
    full = build_tree(s, toy["stepper"], toy["x0"], U, tg, PruneParams(0.05))
    b = compute_pod(collect_snapshots(full), rank=2)
    with pytest.raises(ValueError):
        tree_error(full, full, b)


def test_fit_constant():
    assert fit_constant([2.0, 4.0], [1.0, 2.0]) == pytest.approx(2.0)


def test_convergence_study_reference_limit(toy):
    # full rank and dt equal to the reference step: only round-off remains
    s = toy["sys"]
    U = equidistributed_controls(2)
    snap = build_tree(s, toy["stepper"], toy["x0"], U, TimeGrid(0, 0.2, 0.05))
    rank = compute_pod(collect_snapshots(snap), 1.0).rank_kept
    out = convergence_study(s, toy["stepper"], toy["x0"], U, toy["cost"], 0.0, 0.2, [0.05], [rank], snap, 0.05)
    assert out["rows"][0]["error"] <= 1e-8


def test_halving_dt_at_least_halves_gap(toy):
    s = toy["sys"]
    U = equidistributed_controls(2)
    vals = {dt: backward_sweep(build_tree(s, toy["stepper"], toy["x0"], U, TimeGrid(0, 0.4, dt)), toy["cost"]).root_value
            for dt in (0.1, 0.05, 0.025)}
    g1, g2 = abs(vals[0.1] - vals[0.025]), abs(vals[0.05] - vals[0.025])
    assert g2 <= 0.5 * g1 * 1.2


def test_pruning_study(toy):
    rows = pruning_study(toy["sys"], toy["stepper"], toy["x0"], equidistributed_controls(3), TimeGrid(0, 0.6, 0.1),
                         toy["cost"])
    assert rows[-1]["gap"] == 0.0 and rows[-1]["gap"] <= rows[0]["gap"]
    assert [r["nodes"] for r in rows] == sorted(r["nodes"] for r in rows)
