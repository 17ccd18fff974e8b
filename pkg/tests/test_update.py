import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2arith import LowRankFactor, TruncationControl, add_lowrank_global, add_lowrank_local, random_h2
from h2arith.oracle import oracle_check_suite, oracle_densify, untouched_blocks

from instances import spd_h2, tree_pair


def _factor(rng, m, n, k):
    return LowRankFactor(rng.standard_normal((m, k)), rng.standard_normal((n, k)))


def _expected(A, tree, t0, s0, f):
    R = A.copy()
    R[tree.start[t0]:tree.stop[t0], tree.start[s0]:tree.stop[s0]] += f.alpha * f.X @ f.Y.T
    return R


def test_factor_rank_mismatch():
    with pytest.raises(ValueError):
        LowRankFactor(np.ones((3, 2)), np.ones((3, 1)))


def test_zero_rank_update_is_noop():
    tree, bt = tree_pair(100, seed=1)
    G = random_h2(bt, seed=1)
    A = oracle_densify(G)
    f = LowRankFactor(np.zeros((100, 0)), np.zeros((100, 0)))
    assert np.array_equal(oracle_densify(add_lowrank_global(G, f, TruncationControl())), A)
    H = G.copy()
    add_lowrank_local(H, 0, 0, f, TruncationControl())
    assert np.array_equal(oracle_densify(H), A)


def test_shape_checks():
    tree, bt = tree_pair(60, seed=2)
    G = random_h2(bt, seed=2)
    with pytest.raises(ValueError):
        add_lowrank_global(G, LowRankFactor(np.ones((59, 1)), np.ones((60, 1))), TruncationControl())
    t = tree.sons[0][0]
    with pytest.raises(ValueError):
        add_lowrank_local(G, t, t, LowRankFactor(np.ones((60, 1)), np.ones((60, 1))),
                          TruncationControl())
    with pytest.raises(KeyError):
        add_lowrank_local(G, tree.leaves()[0], tree.sons[0][1],
                          LowRankFactor(np.ones((tree.card(tree.leaves()[0]), 1)),
                                        np.ones((tree.card(tree.sons[0][1]), 1))),
                          TruncationControl())


def test_global_update_exact():
    tree, bt = tree_pair(150, seed=3)
    G = random_h2(bt, rank=3, seed=3)
    A = oracle_densify(G)
    f = _factor(np.random.default_rng(3), 150, 150, 2)
    Z = add_lowrank_global(G, f, TruncationControl.exact())
    ref = A + f.X @ f.Y.T
    assert np.linalg.norm(oracle_densify(Z) - ref, 2) <= 1e-10 * np.linalg.norm(ref, 2)


def test_local_update_at_root_matches_global():
    tree, bt = tree_pair(150, seed=4)
    G = random_h2(bt, rank=3, seed=4)
    f = _factor(np.random.default_rng(4), 150, 150, 2)
    ctl = TruncationControl(1e-6)
    Zg = add_lowrank_global(G, f, ctl)
    Zl = add_lowrank_local(G.copy(), 0, 0, f, ctl)
    ref = oracle_densify(G) + f.X @ f.Y.T
    nrm = np.linalg.norm(ref, 2)
    assert np.linalg.norm(oracle_densify(Zg) - ref, 2) <= 50 * 1e-6 * nrm
    assert np.linalg.norm(oracle_densify(Zl) - ref, 2) <= 50 * 1e-6 * nrm


def test_local_update_leaves_untouched_blocks_identical():
    G, A = spd_h2(300, seed=5, tol=1e-8)
    tree = G.bt.rows
    t0, s0 = tree.sons[0]
    keep = {k: (G.coupling.get(k), G.near.get(k)) for k in untouched_blocks(G.bt, t0, s0)}
    keep = {k: tuple(None if v is None else v.copy() for v in val) for k, val in keep.items()}
    assert keep
    f = _factor(np.random.default_rng(5), tree.card(t0), tree.card(s0), 2)
    add_lowrank_local(G, t0, s0, f, TruncationControl(1e-8))
    for k, (S, N) in keep.items():
        if S is not None:
            assert np.array_equal(S, G.coupling[k])
        if N is not None:
            assert np.array_equal(N, G.near[k])
    ref = _expected(A, tree, t0, s0, f)
    scale = np.linalg.norm(A, 2) + np.linalg.norm(f.X, 2) * np.linalg.norm(f.Y, 2)
    assert np.linalg.norm(oracle_densify(G) - ref, 2) <= 50 * 1e-8 * scale


@settings(max_examples=15, deadline=None)
@given(st.integers(40, 200), st.integers(1, 3), st.integers(0, 1000), st.data())
def test_local_update_exact_at_zero_tolerance(n, k, seed, data):
    tree, bt = tree_pair(n, leaf_size=8, seed=seed)
    G = random_h2(bt, rank=3, seed=seed)
    A = oracle_densify(G)
    blocks = [(bt.t[b], bt.s[b]) for b in range(bt.size)]
    t0, s0 = data.draw(st.sampled_from(blocks))
    f = _factor(np.random.default_rng(seed), tree.card(t0), tree.card(s0), k)
    add_lowrank_local(G, t0, s0, f, TruncationControl.exact())
    ref = _expected(A, tree, t0, s0, f)
    assert np.linalg.norm(oracle_densify(G) - ref, 2) <= 1e-10 * np.linalg.norm(ref, 2)
    structural = oracle_check_suite(G, oracle_densify(G))[:3]
    assert all(r.passed for r in structural), [r.line() for r in structural]


@settings(max_examples=10, deadline=None)
@given(st.integers(60, 250), st.sampled_from([1e-4, 1e-6]), st.integers(0, 1000), st.data())
def test_local_update_within_tolerance(n, eps, seed, data):
    tree, bt = tree_pair(n, leaf_size=8, seed=seed)
    G = random_h2(bt, rank=3, seed=seed)
    A = oracle_densify(G)
    t0, s0 = data.draw(st.sampled_from([(bt.t[b], bt.s[b]) for b in range(bt.size)]))
    f = _factor(np.random.default_rng(seed + 1), tree.card(t0), tree.card(s0), 2)
    add_lowrank_local(G, t0, s0, f, TruncationControl(eps))
    ref = _expected(A, tree, t0, s0, f)
    scale = np.linalg.norm(A, 2) + np.linalg.norm(f.X, 2) * np.linalg.norm(f.Y, 2)
    assert np.linalg.norm(oracle_densify(G) - ref, 2) <= 50 * eps * scale
