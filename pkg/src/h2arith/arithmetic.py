"""Recursive H2-matrix arithmetic: multiply-add, block substitution,
LR and Cholesky factorization and inversion.

Every algorithm recurses over the block tree and reduces to two primitives:
dense operations on inadmissible leaves and low-rank updates of the target
matrix.  Work is tallied through :data:`h2arith.linalg_core.WORK` (one unit
per scalar multiply-add plus one unit per recursive call) and summarized in
:class:`OpCounters`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .cluster import ADMISSIBLE, INADMISSIBLE, SUBDIVIDED
from .h2 import H2Matrix, H2Transpose, densify, materialize_basis
from .linalg_core import (WORK, FactorizationBreakdown, TruncationControl,
                          dense_factor, dense_inverse, dense_triangular_solve, matmul, measure,
                          qr_thin, svd_truncated)
from .update import LowRankFactor, add_lowrank_local

__all__ = [
    "OpCounters",
    "TriangularH2",
    "cholesky_factorize",
    "invert",
    "lr_factorize",
    "multiply_add",
    "solve_lower_left",
    "solve_triangular_vector",
    "solve_upper_right",
]


@dataclass
class OpCounters:
    """Accumulated work units per operation family."""

    W_mm: float = 0.0
    W_lfs: float = 0.0
    W_rfs: float = 0.0
    W_lr: float = 0.0
    W_inv: float = 0.0
    calls: dict = field(default_factory=dict)

    def add(self, name: str, work: float) -> None:
        setattr(self, name, getattr(self, name) + work)
        self.calls[name] = self.calls.get(name, 0) + 1

    def snapshot(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps({"format": "h2arith-counters", "version": 1, **self.snapshot()})


class TriangularH2:
    """Triangular part of an H2-matrix (or transposed view).

    ``lower`` selects the lower or upper triangle with respect to the
    permuted order; ``unit`` means the diagonal is an implicit identity.
    Only diagonal dense leaves are masked, off-diagonal blocks are read
    from the underlying matrix as they are.
    """

    def __init__(self, M, lower: bool = True, unit: bool = False):
        self.M = M
        self.lower = lower
        self.unit = unit
        self.bt = M.bt
        self.tree = M.bt.rows

    @property
    def T(self) -> "TriangularH2":
        return TriangularH2(self.M.T, not self.lower, self.unit)

    @property
    def shape(self):
        return self.M.shape

    def diag_dense(self, t: int) -> np.ndarray:
        N = self.M.N(t, t)
        if self.lower:
            D = np.tril(N, -1) if self.unit else np.tril(N)
        else:
            D = np.triu(N, 1) if self.unit else np.triu(N)
        if self.unit:
            D = D + np.eye(N.shape[0])
        return D

    def solve(self, t: int, B: np.ndarray) -> np.ndarray:
        """``X`` with ``T|_{t x t} X = B``."""
        X = np.array(B, dtype=float, copy=True)
        vec = X.ndim == 1
        if vec:
            X = X[:, None]
        self._solve(t, X, self.tree.start[t])
        return X[:, 0] if vec else X

    def _solve(self, t, X, off):
        tree = self.tree
        WORK.units += 1
        if tree.is_leaf(t):
            X[:] = dense_triangular_solve(self.diag_dense(t), X, "left", self.lower, self.unit)
            return
        t1, t2 = tree.sons[t]
        a = slice(tree.start[t1] - off, tree.stop[t1] - off)
        b = slice(tree.start[t2] - off, tree.stop[t2] - off)
        if self.lower:
            self._solve(t1, X[a], tree.start[t1])
            X[b] -= self.M.apply(t2, t1, X[a])
            self._solve(t2, X[b], tree.start[t2])
        else:
            self._solve(t2, X[b], tree.start[t2])
            X[a] -= self.M.apply(t1, t2, X[b])
            self._solve(t1, X[a], tree.start[t1])

    def densify(self) -> np.ndarray:
        D = densify(self.M)
        if self.lower:
            D = np.tril(D, -1) if self.unit else np.tril(D)
        else:
            D = np.triu(D, 1) if self.unit else np.triu(D)
        if self.unit:
            D += np.eye(D.shape[0])
        return D


def solve_triangular_vector(T: TriangularH2, b) -> np.ndarray:
    """Solve ``T x = b`` for a vector (or block of vectors) over the whole index set."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != T.shape[0]:
        raise ValueError(f"length mismatch: {b.shape[0]} vs {T.shape[0]}")
    return T.solve(0, b)


# ---------------------------------------------------------------------------
# low-rank products
# ---------------------------------------------------------------------------

def _truncate_factors(A: np.ndarray, B: np.ndarray, ctl: TruncationControl):
    """Recompress ``A B^T`` to the rank required by ``ctl``."""
    if A.shape[1] == 0 or A.shape[0] == 0 or B.shape[0] == 0:
        return A[:, :0], B[:, :0]
    Qa, Ra = qr_thin(A)
    Qb, Rb = qr_thin(B)
    U, sig, V = svd_truncated(matmul(Ra, Rb.T), ctl)
    return matmul(Qa, U * sig), matmul(Qb, V)


def _leaf_product(X, Y, t, s, r):
    """``X|_{t x s} Y|_{s x r}`` when one factor block is a leaf.

    Returns ``None`` for a zero product, ``("dense", D)`` or
    ``("lowrank", A, B)`` with product ``A B^T``.
    """
    kx, ky = X.kind(t, s), Y.kind(s, r)
    use_x = kx == ADMISSIBLE
    if kx == ADMISSIBLE and ky == ADMISSIBLE:
        Sx, Sy = X.S(t, s), Y.S(s, r)
        if Sx is None or Sy is None or Sx.size == 0 or Sy.size == 0:
            return None
        use_x = Sx.shape[0] <= Sy.shape[1]
    if use_x:
        S = X.S(t, s)
        if S is None or S.size == 0:
            return None
        Ws = materialize_basis(X.colb, s)
        B = matmul(Y.apply_t(s, r, Ws), S.T)
        return ("lowrank", materialize_basis(X.rowb, t), B)
    if ky == ADMISSIBLE:
        S = Y.S(s, r)
        if S is None or S.size == 0:
            return None
        Vs = materialize_basis(Y.rowb, s)
        A = matmul(X.apply(t, s, Vs), S)
        return ("lowrank", A, materialize_basis(Y.colb, r))
    if kx == INADMISSIBLE and ky == INADMISSIBLE:
        Nx, Ny = X.N(t, s), Y.N(s, r)
        if Nx is None or Ny is None:
            return None
        return ("dense", matmul(Nx, Ny))
    if kx == INADMISSIBLE:
        Nx = X.N(t, s)
        if Nx is None:
            return None
        return ("lowrank", np.eye(Nx.shape[0]), Y.apply_t(s, r, Nx.T))
    Ny = Y.N(s, r)
    if Ny is None:
        return None
    return ("lowrank", X.apply(t, s, Ny), np.eye(Ny.shape[1]))


def _as_factors(prod, ctl):
    if prod[0] == "dense":
        U, sig, V = svd_truncated(prod[1], ctl)
        return U * sig, V
    return _truncate_factors(prod[1], prod[2], ctl)


def _lowrank_product(X, Y, t, s, r, ctl):
    """Truncated factors ``(A, B)`` of ``X|_{t x s} Y|_{s x r}`` (target block is a leaf)."""
    WORK.units += 1
    kx, ky = X.kind(t, s), Y.kind(s, r)
    rows, cols = X.bt.rows, Y.bt.cols
    if kx != SUBDIVIDED or ky != SUBDIVIDED:
        prod = _leaf_product(X, Y, t, s, r)
        if prod is None:
            return np.zeros((rows.card(t), 0)), np.zeros((cols.card(r), 0))
        return _as_factors(prod, ctl)
    As, Bs = [], []
    t_off, r_off = rows.start[t], cols.start[r]
    for t2 in rows.sons_plus(t):
        for r2 in cols.sons_plus(r):
            for s2 in X.bt.cols.sons_plus(s):
                A, B = _lowrank_product(X, Y, t2, s2, r2, ctl)
                if A.shape[1] == 0:
                    continue
                Af = np.zeros((rows.card(t), A.shape[1]))
                Af[rows.start[t2] - t_off:rows.stop[t2] - t_off] = A
                Bf = np.zeros((cols.card(r), B.shape[1]))
                Bf[cols.start[r2] - r_off:cols.stop[r2] - r_off] = B
                As.append(Af)
                Bs.append(Bf)
    if not As:
        return np.zeros((rows.card(t), 0)), np.zeros((cols.card(r), 0))
    return _truncate_factors(np.hstack(As), np.hstack(Bs), ctl)


# ---------------------------------------------------------------------------
# multiplication
# ---------------------------------------------------------------------------

def _add_product(Z: H2Matrix, t, r, alpha, prod, ctl):
    kz = Z.kind(t, r)
    if kz == INADMISSIBLE:
        N = Z.near.get((t, r))
        if N is None:
            return
        if prod[0] == "dense":
            N += alpha * prod[1]
        else:
            N += alpha * matmul(prod[1], prod[2].T)
        return
    A, B = _as_factors(prod, ctl)
    if A.shape[1]:
        add_lowrank_local(Z, t, r, LowRankFactor(A, B, alpha), ctl)


def _mm(Z, t, s, r, alpha, X, Y, ctl):
    WORK.units += 1
    if Z.lower_only and Z.is_upper(t, r):
        return
    kx, ky, kz = X.kind(t, s), Y.kind(s, r), Z.kind(t, r)
    if kx == SUBDIVIDED and ky == SUBDIVIDED:
        rows, mid, cols = Z.bt.rows, X.bt.cols, Z.bt.cols
        if kz == SUBDIVIDED:
            for t2 in rows.sons_plus(t):
                for s2 in mid.sons_plus(s):
                    for r2 in cols.sons_plus(r):
                        _mm(Z, t2, s2, r2, alpha, X, Y, ctl)
        elif kz == INADMISSIBLE:
            for s2 in mid.sons[s]:
                _mm(Z, t, s2, r, alpha, X, Y, ctl)
        else:
            A, B = _lowrank_product(X, Y, t, s, r, ctl)
            if A.shape[1]:
                add_lowrank_local(Z, t, r, LowRankFactor(A, B, alpha), ctl)
        return
    prod = _leaf_product(X, Y, t, s, r)
    if prod is not None:
        _add_product(Z, t, r, alpha, prod, ctl)


def multiply_add(Z: H2Matrix, t: int, r: int, alpha: float, X, t_x: int, s: int, Y, s_y: int,
                 r_y: int, ctl: TruncationControl, counters: Optional[OpCounters] = None) -> H2Matrix:
    """``Z|_{t x r} += alpha X|_{t x s} Y|_{s x r}`` in place.

    ``X`` and ``Y`` may be :class:`H2Matrix` objects or transposed views;
    ``t_x``/``s_y``/``r_y`` must repeat ``t``/``s``/``r`` (they are explicit
    so call sites read like the block equation).
    """
    if t_x != t or s_y != s or r_y != r:
        raise ValueError("block indices of the factors do not chain")
    if X.bt.rows is not Z.bt.rows or Y.bt.cols is not Z.bt.cols or X.bt.cols is not Y.bt.rows:
        raise ValueError("cluster trees of the operands are incompatible")
    for M, a, b, name in ((Z, t, r, "target"), (X, t, s, "left factor"), (Y, s, r, "right factor")):
        try:
            M.kind(a, b)
        except KeyError:
            raise ValueError(f"{name}: ({a}, {b}) is not a block of its block tree") from None
    with measure() as w:
        _mm(Z, t, s, r, alpha, X, Y, ctl)
    if counters is not None:
        counters.add("W_mm", w[0])
    return Z


def mm_work(Z: H2Matrix, t, s, r, X, Y, ctl) -> float:
    """Work of ``Z|_{t x r} += X|_{t x s} Y|_{s x r}`` on a copy of ``Z``."""
    Zc = Z.copy()
    with measure() as w:
        _mm(Zc, t, s, r, 1.0, X, Y, ctl)
    return w[0]


# ---------------------------------------------------------------------------
# block substitution
# ---------------------------------------------------------------------------

def _lsolve(L: TriangularH2, B: H2Matrix, t, s, ctl):
    WORK.units += 1
    kb = B.kind(t, s)
    rows = B.bt.rows
    if kb == INADMISSIBLE:
        N = B.near.get((t, s))
        if N is not None:
            N[:] = dense_triangular_solve(L.diag_dense(t), N, "left", L.lower, L.unit)
        return
    if kb == ADMISSIBLE:
        S = B.coupling.get((t, s))
        if S is None or S.size == 0:
            return
        Vt = materialize_basis(B.row, t)
        D = L.solve(t, Vt) - Vt
        add_lowrank_local(B, t, s, LowRankFactor(matmul(D, S), materialize_basis(B.col, s)), ctl)
        return
    if rows.is_leaf(t):
        for s2 in B.bt.cols.sons[s]:
            _lsolve(L, B, t, s2, ctl)
        return
    t1, t2 = rows.sons[t]
    first, second = (t1, t2) if L.lower else (t2, t1)
    for s2 in B.bt.cols.sons_plus(s):
        _lsolve(L, B, first, s2, ctl)
        _mm(B, second, first, s2, -1.0, L.M, B, ctl)
        _lsolve(L, B, second, s2, ctl)


def _rsolve(R: TriangularH2, B: H2Matrix, t, s, ctl):
    """``X R|_{t x t} = B|_{s x t}``, overwriting block ``(s, t)``."""
    WORK.units += 1
    kb = B.kind(s, t)
    cols = B.bt.cols
    if kb == INADMISSIBLE:
        N = B.near.get((s, t))
        if N is not None:
            N[:] = dense_triangular_solve(R.diag_dense(t), N, "right", R.lower, R.unit)
        return
    if kb == ADMISSIBLE:
        S = B.coupling.get((s, t))
        if S is None or S.size == 0:
            return
        Wt = materialize_basis(B.col, t)
        D = R.T.solve(t, Wt) - Wt
        add_lowrank_local(B, s, t, LowRankFactor(matmul(materialize_basis(B.row, s), S), D), ctl)
        return
    if cols.is_leaf(t):
        for s2 in B.bt.rows.sons[s]:
            _rsolve(R, B, t, s2, ctl)
        return
    t1, t2 = cols.sons[t]
    first, second = (t2, t1) if R.lower else (t1, t2)
    for s2 in B.bt.rows.sons_plus(s):
        _rsolve(R, B, first, s2, ctl)
        _mm(B, s2, first, second, -1.0, B, R.M, ctl)
        _rsolve(R, B, second, s2, ctl)


def solve_lower_left(L: TriangularH2, t: int, B: H2Matrix, s: int, ctl: TruncationControl,
                     counters: Optional[OpCounters] = None) -> H2Matrix:
    """Overwrite ``B|_{t x s}`` by ``X`` with ``L|_{t x t} X = B|_{t x s}``."""
    if not L.lower:
        raise ValueError("solve_lower_left needs a lower triangular operand")
    with measure() as w:
        _lsolve(L, B, t, s, ctl)
    if counters is not None:
        counters.add("W_lfs", w[0])
    return B


def solve_upper_right(R: TriangularH2, t: int, B: H2Matrix, s: int, ctl: TruncationControl,
                      counters: Optional[OpCounters] = None) -> H2Matrix:
    """Overwrite ``B|_{s x t}`` by ``X`` with ``X R|_{t x t} = B|_{s x t}``."""
    if R.lower:
        raise ValueError("solve_upper_right needs an upper triangular operand")
    with measure() as w:
        _rsolve(R, B, t, s, ctl)
    if counters is not None:
        counters.add("W_rfs", w[0])
    return B


# ---------------------------------------------------------------------------
# factorizations and inversion
# ---------------------------------------------------------------------------

def _path(tree, t):
    return tuple(reversed(tree.pred(t)))


def _check_square(A: H2Matrix):
    if A.bt.rows is not A.bt.cols:
        raise ValueError("factorization needs a square matrix over a single cluster tree")


def lr_factorize(A: H2Matrix, ctl: TruncationControl, counters: Optional[OpCounters] = None):
    """Approximate ``A = L R``; both factors share one H2-matrix (unit lower + upper)."""
    _check_square(A)
    F = A.copy()
    if F.col is F.row:
        F.col = F.row.copy()
    L = TriangularH2(F, lower=True, unit=True)
    R = TriangularH2(F, lower=False, unit=False)
    tree = F.bt.rows

    def rec(t):
        WORK.units += 1
        if tree.is_leaf(t):
            N = F.near[(t, t)]
            try:
                Lf, Rf = dense_factor(N, "lr")
            except FactorizationBreakdown as exc:
                raise exc.with_path(_path(tree, t)) from None
            N[:] = np.tril(Lf, -1) + Rf
            return
        t1, t2 = tree.sons[t]
        rec(t1)
        _lsolve(L, F, t1, t2, ctl)
        _rsolve(R, F, t1, t2, ctl)
        _mm(F, t2, t1, t2, -1.0, F, F, ctl)
        rec(t2)

    with measure() as w:
        rec(0)
    if counters is not None:
        counters.add("W_lr", w[0])
    return L, R


def cholesky_factorize(A: H2Matrix, ctl: TruncationControl,
                       counters: Optional[OpCounters] = None) -> TriangularH2:
    """Approximate ``A = L L^T`` for symmetric positive definite ``A``; only ``L`` is stored."""
    _check_square(A)
    row = A.row.copy()
    col = A.col.copy()
    Lm = H2Matrix(A.bt, row, col, lower_only=True)
    for (t, s), S in A.coupling.items():
        if not Lm.is_upper(t, s):
            Lm.coupling[(t, s)] = S.copy()
    for (t, s), N in A.near.items():
        if not Lm.is_upper(t, s):
            Lm.near[(t, s)] = N.copy()
    L = TriangularH2(Lm, lower=True, unit=False)
    LT = L.T
    tree = Lm.bt.rows

    def rec(t):
        WORK.units += 1
        if tree.is_leaf(t):
            N = Lm.near[(t, t)]
            sym = np.tril(N) + np.tril(N, -1).T
            try:
                N[:] = dense_factor(sym, "cholesky")
            except FactorizationBreakdown as exc:
                raise exc.with_path(_path(tree, t)) from None
            return
        t1, t2 = tree.sons[t]
        rec(t1)
        _rsolve(LT, Lm, t1, t2, ctl)
        _mm(Lm, t2, t1, t2, -1.0, Lm, Lm.T, ctl)
        rec(t2)

    with measure() as w:
        rec(0)
    if counters is not None:
        counters.add("W_lr", w[0])
    return L


def invert(A: H2Matrix, ctl: TruncationControl, counters: Optional[OpCounters] = None,
           mm_log: Optional[list] = None) -> H2Matrix:
    """Approximate inverse by recursive block elimination.

    ``A`` is copied into a workspace that receives the Schur complements;
    ``C`` collects the inverse and ``T`` the products ``B12``, ``B21``.
    ``mm_log`` (if given) receives the cluster of every multiplication.
    """
    _check_square(A)
    W = A.copy()
    if W.col is W.row:
        W.col = W.row.copy()
    C = H2Matrix.zeros(A.bt)
    T = H2Matrix.zeros(A.bt)
    tree = A.bt.rows

    def mm(Z, t, s, r, alpha, X, Y, node):
        if mm_log is not None:
            mm_log.append(node)
        _mm(Z, t, s, r, alpha, X, Y, ctl)

    def rec(t):
        WORK.units += 1
        if tree.is_leaf(t):
            try:
                C.near[(t, t)][:] = dense_inverse(W.near[(t, t)])
            except FactorizationBreakdown as exc:
                raise exc.with_path(_path(tree, t)) from None
            return
        t1, t2 = tree.sons[t]
        rec(t1)
        mm(T, t1, t1, t2, 1.0, C, W, t)      # B12 = A11^-1 A12
        mm(T, t2, t1, t1, 1.0, W, C, t)      # B21 = A21 A11^-1
        mm(W, t2, t1, t2, -1.0, W, T, t)     # S = A22 - A21 B12
        rec(t2)                              # C22 = S^-1
        mm(C, t1, t2, t2, -1.0, T, C, t)     # C12 = -B12 C22
        mm(C, t2, t2, t1, -1.0, C, T, t)     # C21 = -C22 B21
        mm(C, t1, t2, t1, -1.0, C, T, t)     # C11 = A11^-1 - C12 B21

    with measure() as w:
        rec(0)
    if counters is not None:
        counters.add("W_inv", w[0])
    return C
