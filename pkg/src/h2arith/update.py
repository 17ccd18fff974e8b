"""Low-rank updates ``Z <- Z + alpha X Y^T`` of H2-matrices.

The global update extends every cluster basis by the factor, which gives an
exact representation of doubled rank, and recompresses.  The local update
only extends the bases in the subtrees below ``t0`` and ``s0``, truncates
them using weights that still see the whole block row of every cluster, and
then repairs the couplings touching those subtrees and the two transfer
matrices ``E_{t0}``, ``E_{s0}`` that connect the subtrees to the rest.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .compression import (basis_r_factors, block_row_parts, inherit_scale, recompress,
                          truncate_subtree, weights_subtree)
from .h2 import ClusterBasis, H2Matrix
from .linalg_core import WORK, TruncationControl, matmul, qr_r

__all__ = ["LowRankFactor", "add_lowrank_global", "add_lowrank_local"]


@dataclass
class LowRankFactor:
    """``alpha X Y^T`` with ``X`` of shape ``m x k`` and ``Y`` of shape ``n x k``."""

    X: np.ndarray
    Y: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape[1] != self.Y.shape[1]:
            raise ValueError(f"factor ranks differ: {self.X.shape[1]} vs {self.Y.shape[1]}")

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def is_zero(self) -> bool:
        return self.k == 0 or self.alpha == 0.0 or not self.X.any() or not self.Y.any()


def _extended_basis(basis: ClusterBasis, F: np.ndarray) -> ClusterBasis:
    tree = basis.tree
    k = F.shape[1]
    out = ClusterBasis(tree)
    for t in range(tree.size):
        out.rank[t] = basis.rank[t] + k
        if tree.is_leaf(t):
            out.leaf[t] = np.hstack([basis.leaf[t], F[tree.start[t]:tree.stop[t]]])
        if tree.father[t] >= 0:
            out.transfer[t] = scipy.linalg.block_diag(basis.transfer[t], np.eye(k))
    return out


def add_lowrank_global(Z: H2Matrix, upd: LowRankFactor, ctl: TruncationControl) -> H2Matrix:
    """``Z + alpha X Y^T`` for factors over the full row and column index sets."""
    rows, cols = Z.bt.rows, Z.bt.cols
    if upd.X.shape[0] != rows.n or upd.Y.shape[0] != cols.n:
        raise ValueError("factor shapes do not conform to the root clusters")
    if upd.is_zero():
        return Z.copy()
    X = upd.alpha * upd.X
    Y = upd.Y
    k = upd.k
    ext = H2Matrix(Z.bt, _extended_basis(Z.row, X), _extended_basis(Z.col, Y),
                   lower_only=Z.lower_only)
    for key, S in Z.coupling.items():
        ext.coupling[key] = scipy.linalg.block_diag(S, np.eye(k))
    for (t, s), N in Z.near.items():
        ext.near[(t, s)] = N + matmul(X[rows.start[t]:rows.stop[t]], Y[cols.start[s]:cols.stop[s]].T)
    return recompress(ext, ctl)


def _path_seed(tree, t0: int, E, partners, coupling, r_other, r_self):
    """Weight of ``father(t0)`` from the blocks of all proper ancestors of ``t0``."""
    f = tree.father[t0]
    B = None
    for a in reversed(tree.pred(f)):
        parts = block_row_parts(a, partners, coupling, r_other.__getitem__,
                                r_self.__getitem__ if r_self is not None else None)
        if B is not None and B.shape[0]:
            P = matmul(B, E(a).T)
            parts.append(P if r_self is None else inherit_scale(tree, a) * P)
        B = qr_r(np.vstack(parts)) if parts else np.zeros((0, 0))
    return B


def _refresh_path(tree, basis: ClusterBasis, cache: list, t0: int) -> None:
    for a in tree.pred(t0)[1:]:
        cache[a] = qr_r(np.vstack([matmul(cache[c], basis.transfer[c]) for c in tree.sons[a]]))


def add_lowrank_local(Z: H2Matrix, t0: int, s0: int, upd: LowRankFactor,
                      ctl: TruncationControl) -> H2Matrix:
    """In place ``Z|_{t0 x s0} += alpha X Y^T``; returns ``Z``.

    Only bases in the subtrees of ``t0`` and ``s0``, the couplings of blocks
    touching them and the transfer matrices ``E_{t0}``, ``E_{s0}`` change.
    """
    bt = Z.bt
    rows, cols = bt.rows, bt.cols
    b0 = bt.lookup.get((t0, s0))
    if b0 is None:
        raise KeyError(f"({t0}, {s0}) is not a block of the block tree")
    if upd.X.shape[0] != rows.card(t0) or upd.Y.shape[0] != cols.card(s0):
        raise ValueError("factor shapes do not conform to the target block")
    if upd.is_zero():
        return Z
    X = upd.alpha * upd.X
    Y = upd.Y
    k = upd.k
    r0, c0 = rows.start[t0], cols.start[s0]
    adm, near = bt.leaves_below(b0)

    for (t, s) in near:
        N = Z.near.get((t, s))
        if N is not None:
            N += matmul(X[rows.start[t] - r0:rows.stop[t] - r0],
                        Y[cols.start[s] - c0:cols.stop[s] - c0].T)
    if not any((t, s) in Z.coupling for (t, s) in adm):
        return Z

    if Z.col is Z.row:
        Z.col = Z.row.copy()
    row, col = Z.row, Z.col
    row_r, col_r = Z.basis_r("row"), Z.basis_r("col")
    rlast, clast = rows.last[t0], cols.last[s0]

    def in_r(t):
        return t0 <= t < rlast

    def in_c(s):
        return s0 <= s < clast

    # extended bases on both subtrees
    Vx, Ex = {}, {}
    for t in range(t0, rlast):
        if rows.is_leaf(t):
            Vx[t] = np.hstack([row.leaf[t], X[rows.start[t] - r0:rows.stop[t] - r0]])
        if t != t0:
            Ex[t] = scipy.linalg.block_diag(row.transfer[t], np.eye(k))
    Wx, Fx = {}, {}
    for s in range(s0, clast):
        if cols.is_leaf(s):
            Wx[s] = np.hstack([col.leaf[s], Y[cols.start[s] - c0:cols.stop[s] - c0]])
        if s != s0:
            Fx[s] = scipy.linalg.block_diag(col.transfer[s], np.eye(k))
    t0_father, s0_father = rows.father[t0], cols.father[s0]
    if t0_father >= 0:
        Ex[t0] = np.vstack([row.transfer[t0], np.zeros((k, row.rank[t0_father]))])
    if s0_father >= 0:
        Fx[s0] = np.vstack([col.transfer[s0], np.zeros((k, col.rank[s0_father]))])

    Rr_ext = basis_r_factors(row, t0, V=Vx.__getitem__, E=Ex.__getitem__)
    Rc_ext = basis_r_factors(col, s0, V=Wx.__getitem__, E=Fx.__getitem__)

    eye_k = np.eye(k)

    def S_ext(t, s):
        S = Z.coupling[(t, s)]
        a, c = in_r(t), in_c(s)
        if a and c:
            return scipy.linalg.block_diag(S, eye_k)
        if a:
            return np.vstack([S, np.zeros((k, S.shape[1]))])
        if c:
            return np.hstack([S, np.zeros((S.shape[0], k))])
        return S

    def r_col(s):
        return Rc_ext[s] if in_c(s) else col_r[s]

    def r_row(t):
        return Rr_ext[t] if in_r(t) else row_r[t]

    blockwise = ctl.blockwise
    seed_row = seed_col = None
    if t0_father >= 0:
        B = _path_seed(rows, t0, lambda a: row.transfer[a], Z.row_partners,
                       lambda a, s: Z.coupling[(a, s)], col_r, row_r if blockwise else None)
        seed_row = matmul(B, Ex[t0].T) if B.shape[0] else None
        if seed_row is not None and blockwise:
            seed_row *= inherit_scale(rows, t0)
    if s0_father >= 0:
        B = _path_seed(cols, s0, lambda a: col.transfer[a], Z.col_partners,
                       lambda a, t: Z.coupling[(t, a)].T, row_r, col_r if blockwise else None)
        seed_col = matmul(B, Fx[s0].T) if B.shape[0] else None
        if seed_col is not None and blockwise:
            seed_col *= inherit_scale(cols, s0)

    Brow = weights_subtree(rows, t0, Ex.__getitem__, Z.row_partners, S_ext, r_col, seed_row,
                           r_row if blockwise else None)
    Bcol = weights_subtree(cols, s0, Fx.__getitem__, Z.col_partners,
                           lambda s, t: S_ext(t, s).T, r_row, seed_col,
                           r_col if blockwise else None)
    leafR, transR, rankR, RR = truncate_subtree(rows, t0, Vx.__getitem__, Ex.__getitem__, Brow, ctl)
    leafC, transC, rankC, RC = truncate_subtree(cols, s0, Wx.__getitem__, Fx.__getitem__, Bcol, ctl)

    # couplings touching either subtree
    affected = set()
    for t in range(t0, rlast):
        for s in Z.row_partners(t):
            affected.add((t, s))
    for s in range(s0, clast):
        for t in Z.col_partners(s):
            affected.add((t, s))
    new_coupling = {}
    for (t, s) in affected:
        S = S_ext(t, s)
        if in_r(t):
            S = matmul(RR[t], S)
        if in_c(s):
            S = matmul(S, RC[s].T)
        new_coupling[(t, s)] = S
    Z.coupling.update(new_coupling)

    # install the new subtree bases and the two connecting transfer matrices
    for t in range(t0, rlast):
        row.rank[t] = rankR[t]
        if rows.is_leaf(t):
            row.leaf[t] = leafR[t]
        if t != t0:
            row.transfer[t] = transR[t]
        row_r[t] = np.eye(rankR[t])
    for s in range(s0, clast):
        col.rank[s] = rankC[s]
        if cols.is_leaf(s):
            col.leaf[s] = leafC[s]
        if s != s0:
            col.transfer[s] = transC[s]
        col_r[s] = np.eye(rankC[s])
    if t0_father >= 0:
        row.transfer[t0] = matmul(RR[t0], Ex[t0])
        row.orthogonal = False
        _refresh_path(rows, row, row_r, t0)
    if s0_father >= 0:
        col.transfer[s0] = matmul(RC[s0], Fx[s0])
        col.orthogonal = False
        _refresh_path(cols, col, col_r, s0)
    WORK.units += 1
    return Z
