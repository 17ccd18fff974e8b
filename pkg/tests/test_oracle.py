import numpy as np
import pytest

from h2arith import (ClusterBasis, H2Matrix, build_block_tree, build_cluster_tree, densify,
                     random_h2)
from h2arith.oracle import (basis_dense, coverage_scan, dense_projection, mutate,
                            oracle_check_suite, oracle_densify, untouched_blocks)

from instances import tree_pair


def _two_point_matrix():
    """2x2 matrix with two 1x1 leaves and an admissible off-diagonal pair."""
    tree = build_cluster_tree(np.array([[0.0], [10.0]]), 1)
    bt = build_block_tree(tree, tree, 1.0)
    row = ClusterBasis(tree)
    for t in range(tree.size):
        row.rank[t] = 1
        if tree.is_leaf(t):
            row.leaf[t] = np.array([[2.0]])
        if tree.father[t] >= 0:
            row.transfer[t] = np.array([[1.0]])
    G = H2Matrix(bt, row, row)
    for (t, s) in bt.admissible_leaves():
        G.coupling[(t, s)] = np.array([[0.25 * (1 + (t > s))]])
    for (t, s) in bt.inadmissible_leaves():
        G.near[(t, s)] = np.array([[float(t)]])
    return G, tree


def test_hand_computed_two_by_two():
    G, tree = _two_point_matrix()
    a, b = tree.sons[0]
    # off-diagonal entries: 2 * S * 2
    expected = np.array([[float(a), 1.0], [2.0, float(b)]])
    assert np.allclose(oracle_densify(G), expected)
    assert np.allclose(basis_dense(G.row, 0), [[2.0], [2.0]])


def test_hand_computed_four_by_four():
    tree = build_cluster_tree(np.array([[0.0], [1.0], [10.0], [11.0]]), 2)
    bt = build_block_tree(tree, tree, 1.0)
    G = random_h2(bt, rank=1, seed=0)
    D = oracle_densify(G)
    a, b = tree.sons[0]
    V = {t: basis_dense(G.row, t) for t in (a, b)}
    W = {t: basis_dense(G.col, t) for t in (a, b)}
    assert np.allclose(D[0:2, 2:4], V[a] @ G.coupling[(a, b)] @ W[b].T)
    assert np.allclose(D[0:2, 0:2], G.near[(a, a)])
    assert np.allclose(D, densify(G))


def test_coverage_of_partition():
    tree, bt = tree_pair(70, seed=1)
    assert np.all(coverage_scan(bt) == 1)


def test_projection_oracle():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))
    M = np.random.default_rng(1).standard_normal((6, 6))
    P = dense_projection(Q, M, Q)
    assert np.allclose(P, Q @ Q.T @ M @ Q @ Q.T)


def test_untouched_excludes_subtrees_and_ancestors():
    tree, bt = tree_pair(120, seed=2)
    t0, s0 = tree.sons[0]
    for (t, s) in untouched_blocks(bt, t0, s0):
        assert not (t0 <= t < tree.last[t0]) and t not in tree.pred(t0)
        assert not (s0 <= s < tree.last[s0]) and s not in tree.pred(s0)


def test_suite_passes_on_valid_matrix():
    tree, bt = tree_pair(100, seed=3)
    G = random_h2(bt, rank=3, seed=3)
    reports = oracle_check_suite(G, oracle_densify(G))
    assert reports and all(r.passed for r in reports)
    assert all(r.line().startswith("[PASS]") for r in reports)
    assert set(reports[0].to_dict()) == {"name", "error", "bound", "passed"}


@pytest.mark.parametrize("kind", ["coupling", "transfer", "near"])
def test_mutations_are_detected(kind):
    tree, bt = tree_pair(100, seed=4)
    G = random_h2(bt, rank=3, seed=4)
    ref = oracle_densify(G)
    H = mutate(G, kind, seed=4)
    reports = oracle_check_suite(H, ref)
    assert not all(r.passed for r in reports)
    # the original stays intact
    assert all(r.passed for r in oracle_check_suite(G, ref))


def test_unknown_mutation():
    tree, bt = tree_pair(40, seed=5)
    with pytest.raises(ValueError):
        mutate(random_h2(bt, seed=5), "basis")
