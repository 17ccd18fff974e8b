import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from h2arith.linalg_core import (WORK, FactorizationBreakdown, TruncationControl, choose_rank,
                                 dense_factor, dense_inverse, dense_triangular_solve, matmul, measure, qr_r,
                                 qr_thin, svd_truncated)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_qr_of_single_column():
    Q, R = qr_thin(np.array([[3.0], [4.0]]))
    assert np.allclose(np.abs(Q[:, 0]), [0.6, 0.8])
    assert np.isclose(abs(R[0, 0]), 5.0)
    assert np.allclose(Q @ R, [[3.0], [4.0]])


def test_qr_rejects_empty():
    with pytest.raises(ValueError):
        qr_thin(np.zeros((0, 3)))


def test_qr_r_of_empty_is_empty():
    assert qr_r(np.zeros((0, 4))).shape == (0, 4)


def test_svd_truncation_rel_half():
    U, s, V = svd_truncated(np.diag([3.0, 1.0]), TruncationControl(rel_tol=0.5))
    assert s.tolist() == [3.0]
    assert U.shape == (2, 1) and V.shape == (2, 1)


def test_svd_truncation_abs_and_max_rank():
    M = np.diag([4.0, 2.0, 1.0, 0.5])
    assert svd_truncated(M, TruncationControl(0.0, abs_tol=1.5))[1].size == 2
    assert svd_truncated(M, TruncationControl(0.0, max_rank=1))[1].size == 1
    assert svd_truncated(M, TruncationControl.exact())[1].size == 4


def test_exact_control_drops_zero_singular_values():
    M = np.diag([2.0, 0.0, 1.0])
    assert svd_truncated(M, TruncationControl.exact())[1].size == 2


def test_control_validation():
    with pytest.raises(ValueError):
        TruncationControl(-1.0)
    with pytest.raises(ValueError):
        TruncationControl(1e-3, max_rank=-1)


def test_blockwise_cutoff_is_absolute():
    c = TruncationControl(1e-3, blockwise=True).basis_cutoff()
    assert c.rel_tol == 0.0 and c.abs_tol == 1e-3
    plain = TruncationControl(1e-3)
    assert plain.basis_cutoff() is plain


def test_dense_lr_and_cholesky_small():
    M = np.array([[4.0, 2.0], [2.0, 3.0]])
    L, R = dense_factor(M, "lr")
    assert np.allclose(L, [[1.0, 0.0], [0.5, 1.0]])
    assert np.allclose(R, [[4.0, 2.0], [0.0, 2.0]])
    C = dense_factor(M, "cholesky")
    assert np.allclose(C, [[2.0, 0.0], [1.0, np.sqrt(2.0)]])


def test_zero_pivot_breaks_down():
    with pytest.raises(FactorizationBreakdown) as exc:
        dense_factor(np.array([[0.0, 1.0], [1.0, 0.0]]), "lr")
    assert exc.value.pivot == 0


def test_dense_inverse_pivots_and_charges_cube():
    M = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 0.0], [3.0, 1.0, 1.0]])
    with measure() as w:
        X = dense_inverse(M)
    assert np.allclose(X @ M, np.eye(3))
    assert w[0] == 27


def test_singular_inverse_breaks_down():
    with pytest.raises(FactorizationBreakdown):
        dense_inverse(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_indefinite_cholesky_breaks_down():
    with pytest.raises(FactorizationBreakdown):
        dense_factor(np.array([[1.0, 2.0], [2.0, 1.0]]), "cholesky")


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        svd_truncated(np.array([[np.nan]]), TruncationControl())


def test_triangular_solves_both_sides():
    rng = np.random.default_rng(0)
    T = np.tril(rng.standard_normal((5, 5))) + 5 * np.eye(5)
    B = rng.standard_normal((5, 3))
    X = dense_triangular_solve(T, B, "left", lower=True)
    assert np.allclose(T @ X, B)
    C = rng.standard_normal((3, 5))
    Y = dense_triangular_solve(T.T, C, "right", lower=False)
    assert np.allclose(Y @ T.T, C)
    Z = dense_triangular_solve(np.tril(T, -1) + np.eye(5), B, "left", lower=True, unit_diag=True)
    assert np.allclose((np.tril(T, -1) + np.eye(5)) @ Z, B)


def test_singular_triangular_solve():
    with pytest.raises(FactorizationBreakdown):
        dense_triangular_solve(np.diag([1.0, 0.0]), np.ones(2))


def test_work_meter_counts_multiply_adds():
    with measure() as w:
        matmul(np.ones((3, 4)), np.ones((4, 5)))
    assert w[0] == 60
    before = WORK.units
    with measure() as w2:
        pass
    assert w2[0] == 0 and WORK.units == before


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite))
def test_qr_reconstructs(M):
    Q, R = qr_thin(M)
    assert np.allclose(Q @ R, M, atol=1e-10)
    assert np.allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite),
       st.sampled_from([1e-1, 1e-3, 1e-8]))
def test_svd_truncation_error_bound(M, tol):
    U, s, V = svd_truncated(M, TruncationControl(tol))
    full = np.linalg.svd(M, compute_uv=False)
    err = np.linalg.norm(M - (U * s) @ V.T, 2)
    assert err <= max(tol * full[0], 0.0) * (1 + 1e-8) + 1e-10
    assert s.size == choose_rank(full, TruncationControl(tol))


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_cholesky_of_gram_plus_identity(M):
    A = M @ M.T + np.eye(M.shape[0])
    L = dense_factor(A, "cholesky")
    assert np.allclose(L @ L.T, A, atol=1e-9 * np.abs(A).max())
    Lr, R = dense_factor(A, "lr")
    assert np.allclose(Lr @ R, A, atol=1e-9 * np.abs(A).max())
