import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scalar_system
from hjbtree.stepper import Stepper, TimeGrid
from hjbtree.tree import (
    ControlGrid,
    PruneParams,
    TreeMemoryError,
    build_tree,
    cardinality,
    equidistributed_controls,
    prune_level,
)


def _tree(p, M, N, eps=0.0, **kw):
    return build_tree(p["sys"], p["stepper"], p["x0"], equidistributed_controls(M), TimeGrid(0, N * 0.1, 0.1),
                      PruneParams(eps, **kw))


@pytest.mark.parametrize("M", [1, 2, 3])
@pytest.mark.parametrize("N", [3, 5, 8])
def test_unpruned_geometric_cardinality(toy, M, N):
    counts, total = cardinality(_tree(toy, M, N))
    assert counts == [M**n for n in range(N + 1)]
    assert total == sum(M**n for n in range(N + 1))


def test_prune_zero_eps_keeps_distinct():
    X = np.random.default_rng(0).normal(size=(50, 4))
    surv, red = prune_level(X, 0.0)
    assert sorted(surv) == list(range(50)) and red == {}


@pytest.mark.parametrize("eps", [0.0, 0.5])
@pytest.mark.parametrize("strategy", ["sorted", "allpairs"])
def test_prune_identical_pair(eps, strategy):
    X = np.array([[1.0, 2.0], [0.0, 5.0], [1.0, 2.0]])
    surv, red = prune_level(X, eps, strategy)
    assert len(surv) == 2 and red == {2: 0}


def test_prune_negative_zero_is_duplicate():
    surv, red = prune_level(np.array([[0.0, 1.0], [-0.0, 1.0]]), 0.0)
    assert surv == [0] and red == {1: 0}


def test_scan_order_and_first_absorber():
    X = np.array([[0.3, 0.0], [0.0, 0.0], [0.1, 0.0], [0.15, 0.0]])
    surv, red = prune_level(X, 0.12)
    # scan: 1, 2, 3, 0 -> 1 kept, 2 cut by 1, 3 kept (0.15 from 1), 0 kept
    assert surv == [1, 3, 0] and red == {2: 1}


@given(st.integers(0, 2**32 - 1), st.floats(0.002, 0.05))
@settings(max_examples=20, deadline=None)
def test_sorted_window_matches_allpairs(seed, scale):
    X = np.random.default_rng(seed).random((500, 6)) * scale
    a = prune_level(X, 0.01, "allpairs")
    b = prune_level(X, 0.01, "sorted")
    assert a == b


def test_sorted_window_matches_allpairs_with_ties():
    rng = np.random.default_rng(7)
    X = np.round(rng.random((500, 6)) * 0.05, 2)
    assert prune_level(X, 0.01, "allpairs") == prune_level(X, 0.01, "sorted")


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_redirect_targets_are_close_survivors(seed):
    X = np.random.default_rng(seed).random((200, 3)) * 0.1
    surv, red = prune_level(X, 0.02)
    kept = set(surv)
    assert kept.isdisjoint(red) and len(kept) + len(red) == len(X)
    for cut, tgt in red.items():
        assert tgt in kept and np.linalg.norm(X[cut] - X[tgt]) <= 0.02


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.1), st.floats(0.0, 0.1))
@settings(max_examples=50, deadline=None)
def test_pruning_monotone_in_one_dimension(seed, e1, e2):
    lo, hi = sorted((e1, e2))
    X = np.random.default_rng(seed).random((100, 1))
    assert len(prune_level(X, hi)[0]) <= len(prune_level(X, lo)[0])


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.2))
@settings(max_examples=30, deadline=None)
def test_zero_epsilon_keeps_the_most(seed, eps):
    X = np.random.default_rng(seed).random((100, 3))
    assert len(prune_level(X, eps)[0]) <= len(prune_level(X, 0.0)[0])


def test_single_control_is_a_path():
    s = scalar_system()
    tr = build_tree(s, Stepper(), np.array([1.0]), ControlGrid([0.0]), TimeGrid(0, 1.0, 0.1))
    assert cardinality(tr) == ([1] * 11, 11)


def test_structure_of_pruned_tree(toy):
    tr = _tree(toy, 3, 6, eps=0.01)
    offs = tr.offsets
    M = 3
    for n, lv in enumerate(tr.levels[:-1]):
        nxt = tr.levels[n + 1]
        assert lv.successors.shape == (len(lv), M)
        assert np.all((lv.successors >= offs[n + 1]) & (lv.successors < offs[n + 2]))
        # every successor is within epsilon of the true child state
        for p in range(len(lv)):
            for j in range(M):
                child = toy["stepper"].step(toy["sys"], lv.states[p], tr.controls.values[j], tr.time.t(n), 0.1)
                tgt = nxt.states[lv.successors[p, j] - offs[n + 1]]
                assert np.linalg.norm(child - tgt) <= 0.01 + 1e-12
        # survivors' own edges point back at themselves
        for q in range(len(nxt)):
            par = nxt.parent[q] - offs[n]
            assert lv.successors[par, nxt.control[q]] == offs[n + 1] + q
    # every node reaches the root in n steps
    for n in range(1, len(tr.levels)):
        ids = tr.levels[n].parent
        for k in range(n - 1, 0, -1):
            ids = tr.levels[k].parent[ids - offs[k]]
        assert np.all(ids == 0)


def test_node_accessors(toy):
    tr = _tree(toy, 2, 3)
    node = tr.node(5)
    lvl, pos = tr.locate(5)
    assert node.level == lvl == 2
    assert np.array_equal(node.state, tr.levels[2].states[pos])
    assert tr.states().shape == (tr.n_nodes, tr.dim)


def test_deterministic(toy):
    a, b = _tree(toy, 3, 5, 0.01), _tree(toy, 3, 5, 0.01)
    for la, lb in zip(a.levels, b.levels):
        assert np.array_equal(la.states, lb.states) and np.array_equal(la.parent, lb.parent)


def test_allpairs_and_sorted_trees_agree(toy):
    a = _tree(toy, 3, 5, 0.01, strategy="allpairs")
    b = _tree(toy, 3, 5, 0.01, strategy="sorted")
    assert cardinality(a) == cardinality(b)


def test_node_budget(toy):
    with pytest.raises(TreeMemoryError) as info:
        build_tree(toy["sys"], toy["stepper"], toy["x0"], equidistributed_controls(2),
                   TimeGrid(0, 1, 0.1), PruneParams(0.0), max_nodes=100)
    assert info.value.levels_built == 5


def test_control_grid_validation():
    with pytest.raises(ValueError):
        ControlGrid([0.0, 0.0])
    with pytest.raises(ValueError):
        PruneParams(-1.0)
    np.testing.assert_allclose(equidistributed_controls(3).values.ravel(), [-2.0, -1.0, 0.0])
