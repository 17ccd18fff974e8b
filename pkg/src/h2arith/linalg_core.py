"""Dense kernels shared by every other module.

All dense matrices are plain ``numpy.ndarray`` objects of dtype float64 in
C (row-major) order.  Every kernel adds its multiply-add count to the global
work meter :data:`WORK`, which the arithmetic module reads to produce the
operation counters.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

__all__ = [
    "FactorizationBreakdown",
    "TruncationControl",
    "WORK",
    "choose_rank",
    "dense_factor",
    "dense_triangular_solve",
    "matmul",
    "measure",
    "qr_r",
    "qr_thin",
    "svd_truncated",
]


class FactorizationBreakdown(ArithmeticError):
    """A pivot vanished (or lost definiteness) during an unpivoted factorization."""

    def __init__(self, pivot: int, path: tuple = (), reason: str = "zero pivot"):
        self.pivot = int(pivot)
        self.path = tuple(path)
        self.reason = reason
        where = f" in cluster path {list(self.path)}" if self.path else ""
        super().__init__(f"factorization breakdown at pivot {self.pivot}{where}: {reason}")

    def with_path(self, path) -> "FactorizationBreakdown":
        return FactorizationBreakdown(self.pivot, tuple(path), self.reason)


class _WorkMeter:
    __slots__ = ("units",)

    def __init__(self):
        self.units = 0.0


#: Global tally of scalar multiply-adds performed by the dense kernels.
WORK = _WorkMeter()


@contextlib.contextmanager
def measure() -> Iterator[list]:
    """Yield a one-element list that receives the work spent inside the block."""
    box = [0.0]
    start = WORK.units
    try:
        yield box
    finally:
        box[0] = WORK.units - start


@dataclass(frozen=True)
class TruncationControl:
    """Rank cutoff rule ``sigma_{r+1} <= max(abs_tol, rel_tol * sigma_1)``.

    ``max_rank=None`` means unbounded.  At least one criterion must be active;
    ``rel_tol=0, abs_tol=0, max_rank=None`` is the "exact" control that only
    drops exactly vanishing singular values.

    ``blockwise=True`` changes how cluster bases are truncated: every block of
    a block row is scaled by the inverse of its own norm before the weighted
    singular values are cut at ``rel_tol``, so each block keeps relative
    accuracy ``rel_tol`` instead of accuracy relative to the whole block row.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 0.0
    max_rank: Optional[int] = None
    blockwise: bool = False

    def __post_init__(self):
        if self.rel_tol < 0 or self.abs_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.max_rank is not None and self.max_rank < 0:
            raise ValueError("max_rank must be non-negative")

    @classmethod
    def exact(cls) -> "TruncationControl":
        return cls(rel_tol=0.0, abs_tol=0.0, max_rank=None)

    def basis_cutoff(self) -> "TruncationControl":
        """Control applied to block-row weighted singular values."""
        if not self.blockwise:
            return self
        return TruncationControl(0.0, max(self.abs_tol, self.rel_tol), self.max_rank)


def _check_finite(M: np.ndarray) -> None:
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite entries in dense input")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with work accounting."""
    WORK.units += a.shape[0] * a.shape[1] * (b.shape[1] if b.ndim == 2 else 1)
    return a @ b


def qr_thin(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR: ``Q`` is ``p x min(p,q)`` orthonormal, ``R`` is ``min(p,q) x q``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError("qr_thin expects a non-empty 2-D matrix")
    _check_finite(M)
    p, q = M.shape
    WORK.units += p * q * min(p, q)
    Q, R = np.linalg.qr(M, mode="reduced")
    return Q, R


def qr_r(M: np.ndarray) -> np.ndarray:
    """Triangular factor only; empty inputs give an empty ``0 x q`` factor."""
    p, q = M.shape
    if p == 0 or q == 0:
        return np.zeros((0, q))
    WORK.units += p * q * min(p, q)
    return np.linalg.qr(M, mode="r")


def choose_rank(sigma: np.ndarray, ctl: TruncationControl) -> int:
    """Smallest rank whose first dropped singular value meets the cutoff."""
    if sigma.size == 0:
        return 0
    cut = max(ctl.abs_tol, ctl.rel_tol * sigma[0])
    # sigma is non-increasing, so the kept set is a prefix
    r = int(np.count_nonzero(sigma > cut))
    if ctl.max_rank is not None:
        r = min(r, ctl.max_rank)
    return r


def svd_truncated(M: np.ndarray, ctl: TruncationControl):
    """Truncated SVD ``M ~ U diag(sigma) V^T`` under ``ctl``.

    Returns ``(U, sigma, V)`` with ``V`` holding right singular vectors as
    columns.
    """
    M = np.asarray(M, dtype=float)
    _check_finite(M)
    p, q = M.shape
    if p == 0 or q == 0:
        return np.zeros((p, 0)), np.zeros(0), np.zeros((q, 0))
    WORK.units += 4 * p * q * min(p, q)
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError:
        U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
    r = choose_rank(s, ctl)
    return U[:, :r], s[:r], Vt[:r].T


def _lr_nopivot(M: np.ndarray, tiny: float):
    n = M.shape[0]
    A = M.copy()
    for i in range(n):
        piv = A[i, i]
        if abs(piv) <= tiny:
            raise FactorizationBreakdown(i, reason=f"pivot {piv:.3e} below threshold {tiny:.3e}")
        A[i + 1:, i] /= piv
        A[i + 1:, i + 1:] -= np.outer(A[i + 1:, i], A[i, i + 1:])
    L = np.tril(A, -1) + np.eye(n)
    R = np.triu(A)
    return L, R


def dense_factor(M: np.ndarray, kind: str = "lr"):
    """Unpivoted dense factorization.

    ``kind="lr"`` returns ``(L, R)`` with unit lower ``L``;
    ``kind="cholesky"`` returns lower ``L`` with ``L L^T = M``.
    Raises :class:`FactorizationBreakdown` when a pivot is (numerically) zero
    or, for Cholesky, the matrix is not positive definite.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("dense_factor expects a square matrix")
    _check_finite(M)
    n = M.shape[0]
    if n == 0:
        return (np.zeros((0, 0)), np.zeros((0, 0))) if kind == "lr" else np.zeros((0, 0))
    WORK.units += n ** 3 / 3.0
    tiny = 1e-14 * np.linalg.norm(M, 2)
    if kind == "lr":
        return _lr_nopivot(M, tiny)
    if kind == "cholesky":
        L, info = lapack.dpotrf(M, lower=1, clean=1)
        if info > 0:
            raise FactorizationBreakdown(info - 1, reason="matrix not positive definite")
        d = np.diag(L)
        small = np.nonzero(d * d <= tiny)[0]
        if small.size:
            raise FactorizationBreakdown(int(small[0]), reason="pivot below threshold")
        return L
    raise ValueError(f"unknown factorization kind {kind!r}")


def dense_inverse(M: np.ndarray) -> np.ndarray:
    """Inverse of a square matrix by pivoted LU (LAPACK ``getrf`` and ``getri``).

    Charged ``n^3`` units, the multiply-add count of the two LAPACK stages.
    Raises :class:`FactorizationBreakdown` for a (numerically) singular matrix.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("dense_inverse expects a square matrix")
    _check_finite(M)
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    WORK.units += n ** 3
    lu, piv, info = lapack.dgetrf(M)
    d = np.abs(np.diag(lu))
    small = np.nonzero(d <= 1e-14 * np.linalg.norm(M, 2))[0]
    if info > 0 or small.size:
        raise FactorizationBreakdown(int(small[0]) if small.size else info - 1,
                                     reason="singular pivot in dense inversion")
    inv, info = lapack.dgetri(lu, piv)
    return inv


def dense_triangular_solve(T: np.ndarray, B: np.ndarray, side: str = "left",
                           lower: bool = True, unit_diag: bool = False) -> np.ndarray:
    """Solve ``T X = B`` (``side="left"``) or ``X T = B`` (``side="right"``)."""
    T = np.asarray(T, dtype=float)
    B = np.asarray(B, dtype=float)
    n = T.shape[0]
    if T.shape != (n, n):
        raise ValueError("triangular matrix must be square")
    if not unit_diag:
        d = np.abs(np.diag(T))
        if n and d.min() == 0.0:
            raise FactorizationBreakdown(int(np.argmin(d)), reason="zero diagonal in triangular solve")
    vec = B.ndim == 1
    B2 = B[:, None] if vec else B
    if side == "left":
        if B2.shape[0] != n:
            raise ValueError("shape mismatch in triangular solve")
        WORK.units += 0.5 * n * n * B2.shape[1]
        X = scipy.linalg.solve_triangular(T, B2, lower=lower, unit_diagonal=unit_diag,
                                          check_finite=False)
    elif side == "right":
        if B2.shape[1] != n:
            raise ValueError("shape mismatch in triangular solve")
        WORK.units += 0.5 * n * n * B2.shape[0]
        X = scipy.linalg.solve_triangular(T, B2.T, trans="T", lower=lower,
                                          unit_diagonal=unit_diag, check_finite=False).T
    else:
        raise ValueError("side must be 'left' or 'right'")
    return X[:, 0] if vec else X
