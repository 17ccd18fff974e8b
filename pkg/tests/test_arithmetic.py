import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from h2arith import (FactorizationBreakdown, H2Matrix, OpCounters, TriangularH2,
                     TruncationControl, build_block_tree, build_cluster_tree, cholesky_factorize,
                     densify, h2_from_sparse, invert, lr_factorize, multiply_add, random_h2,
                     solve_lower_left, solve_triangular_vector, solve_upper_right)
from h2arith.oracle import oracle_check_suite, oracle_densify

from instances import dominant_h2, rel2, spd_h2, tree_pair

CTL = TruncationControl(1e-10)


def _identity(bt):
    return h2_from_sparse(sp.identity(bt.rows.n), bt, permuted=True)


def _tridiag(n, diag=4.0):
    T = sp.diags([np.ones(n - 1), diag * np.ones(n), np.ones(n - 1)], [-1, 0, 1])
    tree = build_cluster_tree(np.arange(n, dtype=float)[:, None], 8, support=0.5)
    bt = build_block_tree(tree, tree, 1.0)
    return h2_from_sparse(T, bt), T.toarray()[np.ix_(tree.perm, tree.perm)]


def test_multiply_by_identity():
    tree, bt = tree_pair(120, seed=1)
    G = random_h2(bt, rank=3, seed=1)
    Z = H2Matrix.zeros(bt)
    multiply_add(Z, 0, 0, 1.0, _identity(bt), 0, 0, G, 0, 0, CTL)
    assert rel2(densify(Z), oracle_densify(G)) <= 1e-10
    Z = H2Matrix.zeros(bt)
    multiply_add(Z, 0, 0, 2.0, G, 0, 0, _identity(bt), 0, 0, CTL)
    assert rel2(densify(Z), 2.0 * oracle_densify(G)) <= 1e-10


def test_multiply_add_small_residual():
    tree, bt = tree_pair(64, leaf_size=8, seed=2)
    X = random_h2(bt, rank=3, seed=2)
    Y = random_h2(bt, rank=3, seed=3)
    Z = random_h2(bt, rank=3, seed=4)
    Dx, Dy, Dz = (oracle_densify(M) for M in (X, Y, Z))
    multiply_add(Z, 0, 0, -1.5, X, 0, 0, Y, 0, 0, CTL)
    ref = Dz - 1.5 * Dx @ Dy
    assert rel2(densify(Z), ref) <= 1e-8


def test_multiply_add_transposed_operands():
    tree, bt = tree_pair(80, leaf_size=8, seed=5)
    X = random_h2(bt, rank=3, seed=5)
    Z = H2Matrix.zeros(bt)
    multiply_add(Z, 0, 0, 1.0, X, 0, 0, X.T, 0, 0, CTL)
    Dx = oracle_densify(X)
    assert rel2(densify(Z), Dx @ Dx.T) <= 1e-8


def test_multiply_add_subblock():
    tree, bt = tree_pair(100, leaf_size=8, seed=6)
    X = random_h2(bt, rank=3, seed=6)
    Z = random_h2(bt, rank=3, seed=7)
    Dx, Dz = oracle_densify(X), oracle_densify(Z)
    t, s = tree.sons[0]
    multiply_add(Z, t, s, 1.0, X, t, t, X, t, s, CTL)
    a = slice(tree.start[t], tree.stop[t])
    b = slice(tree.start[s], tree.stop[s])
    ref = Dz.copy()
    ref[a, b] += Dx[a, a] @ Dx[a, b]
    assert rel2(densify(Z), ref) <= 1e-8


def test_multiply_add_index_checks():
    tree, bt = tree_pair(60, seed=8)
    G = random_h2(bt, seed=8)
    with pytest.raises(ValueError):
        multiply_add(G.copy(), 0, 0, 1.0, G, 1, 0, G, 0, 0, CTL)


def test_cholesky_tridiagonal():
    G, A = _tridiag(64)
    L = cholesky_factorize(G, CTL)
    Ld = L.densify()
    assert np.allclose(Ld, np.tril(Ld))
    assert rel2(Ld @ Ld.T, A) <= 1e-10
    assert np.allclose(Ld, np.linalg.cholesky(A), atol=1e-10)


def test_lr_factorization_residual():
    G = dominant_h2(64, seed=9)
    A = oracle_densify(G)
    L, R = lr_factorize(G, CTL)
    Ld, Rd = L.densify(), R.densify()
    assert np.allclose(np.diag(Ld), 1.0)
    assert np.allclose(Rd, np.triu(Rd))
    assert rel2(Ld @ Rd, A) <= 1e-8


def test_inverse_of_scaled_identity():
    tree, bt = tree_pair(50, leaf_size=8, seed=10)
    G = _identity(bt)
    for N in G.near.values():
        N *= 2.0
    C = invert(G, CTL)
    assert np.allclose(densify(C), 0.5 * np.eye(50))


def test_inverse_uses_six_products_per_level():
    tree, bt = tree_pair(100, leaf_size=8, seed=11)
    G = dominant_h2(100, seed=11, leaf_size=8)
    log = []
    C = invert(G, CTL, mm_log=log)
    inner = [t for t in range(tree.size) if not tree.is_leaf(t)]
    assert sorted(set(log)) == inner
    assert all(log.count(t) == 6 for t in inner)
    A = oracle_densify(G)
    assert np.linalg.norm(densify(C) @ A - np.eye(100), 2) <= 1e-6


def test_triangular_solves_against_dense():
    G, A = spd_h2(120, seed=12)
    L = cholesky_factorize(G, CTL)
    Ld = L.densify()
    b = np.random.default_rng(12).standard_normal(120)
    x = solve_triangular_vector(L, b)
    assert np.allclose(Ld @ x, b)
    y = solve_triangular_vector(L.T, b)
    assert np.allclose(Ld.T @ y, b)
    with pytest.raises(ValueError):
        solve_triangular_vector(L, b[:-1])


def test_block_substitution_left_and_right():
    G, A = spd_h2(160, seed=13)
    L = cholesky_factorize(G, CTL)
    Ld = L.densify()
    tree = G.bt.rows
    B = G.copy()
    D = oracle_densify(B)
    solve_lower_left(L, 0, B, 0, CTL)
    assert rel2(Ld @ densify(B), D) <= 1e-8
    t, s = tree.sons[0]
    B = G.copy()
    solve_upper_right(L.T, t, B, s, CTL)
    a = slice(tree.start[t], tree.stop[t])
    b = slice(tree.start[s], tree.stop[s])
    X = densify(B)[b, a]
    assert rel2(X @ Ld.T[a, a], D[b, a]) <= 1e-8
    with pytest.raises(ValueError):
        solve_lower_left(L.T, 0, B, 0, CTL)
    with pytest.raises(ValueError):
        solve_upper_right(L, 0, B, 0, CTL)


def test_transpose_duality_of_products():
    tree, bt = tree_pair(90, leaf_size=8, seed=14)
    X = random_h2(bt, rank=3, seed=14)
    Y = random_h2(bt, rank=3, seed=15)
    Z1 = H2Matrix.zeros(bt)
    multiply_add(Z1, 0, 0, 1.0, X, 0, 0, Y, 0, 0, CTL)
    Z2 = H2Matrix.zeros(bt)
    multiply_add(Z2, 0, 0, 1.0, Y.T, 0, 0, X.T, 0, 0, CTL)
    assert rel2(densify(Z1), densify(Z2).T) <= 1e-8


def test_breakdown_reports_path():
    tree, bt = tree_pair(40, leaf_size=8, seed=16)
    G = H2Matrix.zeros(bt)
    with pytest.raises(FactorizationBreakdown) as exc:
        lr_factorize(G, CTL)
    assert exc.value.path and exc.value.path[0] == 0


def test_counters_accumulate():
    G, A = spd_h2(100, seed=17)
    c = OpCounters()
    cholesky_factorize(G, CTL, c)
    invert(G, CTL, c)
    assert c.W_lr > 0 and c.W_inv > 0
    assert c.calls == {"W_lr": 1, "W_inv": 1}
    assert '"W_inv"' in c.to_json()


@settings(max_examples=10, deadline=None)
@given(st.integers(30, 160), st.integers(0, 1000), st.sampled_from([1e-4, 1e-8]))
def test_cholesky_structure_and_accuracy(n, seed, eps):
    G, A = spd_h2(n, seed=seed, leaf_size=8, tol=1e-12)
    L = cholesky_factorize(G, TruncationControl(eps))
    Ld = L.densify()
    assert not np.triu(Ld, 1).any()
    assert rel2(Ld @ Ld.T, A) <= 10 * eps
    structural = oracle_check_suite(L.M, oracle_densify(L.M))[:3]
    assert all(r.passed for r in structural)


def test_triangular_view_flags():
    G, A = spd_h2(40, seed=18)
    T = TriangularH2(G, lower=True, unit=True)
    assert T.T.lower is False and T.T.unit is True
    assert T.shape == (40, 40)
