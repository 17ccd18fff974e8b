import numpy as np

from h2arith import (TruncationControl, cholesky_factorize, estimate_convergence_factor,
                     make_instance, make_preconditioner, pcg)


def test_identity_system_one_step():
    b = np.arange(1.0, 6.0)
    x, st = pcg(lambda v: v, lambda r: r, b)
    assert np.allclose(x, b) and st.iterations == 1 and st.converged


def test_zero_rhs():
    x, st = pcg(lambda v: v, lambda r: r, np.zeros(4))
    assert not x.any() and st.iterations == 0


def test_diag_system_two_steps():
    d = np.array([1.0, 2.0])
    x, st = pcg(lambda v: d * v, lambda r: r, np.ones(2))
    assert np.allclose(x, [1.0, 0.5]) and st.iterations <= 2


def test_convergence_factor_of_diag():
    d = np.array([1.0, 2.0])
    err = estimate_convergence_factor(lambda v: d * v, lambda r: r, 2, iters=200, rtol=1e-12)
    assert np.isclose(err, 1.0, atol=1e-6)


def test_exact_preconditioner_converges_immediately():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((30, 30))
    A = M @ M.T + 30 * np.eye(30)
    Ainv = np.linalg.inv(A)
    _, st = pcg(lambda v: A @ v, lambda r: Ainv @ r, rng.standard_normal(30), tol=1e-10)
    assert st.iterations <= 2
    assert estimate_convergence_factor(lambda v: A @ v, lambda r: Ainv @ r, 30) < 1e-8


def test_maxit_reports_no_convergence():
    A = np.diag(np.arange(1.0, 101.0))
    _, st = pcg(lambda v: A @ v, lambda r: r, np.ones(100), tol=1e-12, maxit=3)
    assert not st.converged and st.iterations == 3


def test_h2_preconditioner_on_fem():
    G, tree, bt, inst = make_instance("fem", 5, leaf_size=16)
    L = cholesky_factorize(G, TruncationControl(1e-6, blockwise=True))
    prec = make_preconditioner(L, tree.perm)
    b = inst.matvec(np.ones(inst.n))
    x, st = pcg(inst.matvec, prec, b)
    assert st.converged and st.iterations <= 3
    assert np.allclose(x, 1.0, atol=1e-6)


def test_convergence_estimate_is_deterministic():
    G, tree, bt, inst = make_instance("fem", 4, leaf_size=16)
    L = cholesky_factorize(G, TruncationControl(1e-2, blockwise=True))
    prec = make_preconditioner(L, tree.perm)
    a = estimate_convergence_factor(inst.matvec, prec, inst.n, seed=3)
    b = estimate_convergence_factor(inst.matvec, prec, inst.n, seed=3)
    assert a == b
