"""Recompression of H2-matrices into truncated orthogonal nested bases.

The block row of a cluster ``t`` collects every admissible block ``(t*, s)``
with ``t*`` equal to ``t`` or one of its ancestors.  Its singular structure is
captured by a small weight matrix ``B_t`` with ``V_t B_t^T`` having the same
singular values as the materialized block row; the weights are built top-down
by stacking ``R_{W,s} S_{t,s}^T`` for the cluster's own blocks on top of the
father's weight times ``E_t^T`` and reducing by QR.

All kernels here work on a subtree with an optional inherited father weight,
so the local update can reuse them on the affected subtrees only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .h2 import ClusterBasis, H2Matrix
from .linalg_core import TruncationControl, matmul, qr_r, svd_truncated

__all__ = [
    "BasisChange",
    "RowSets",
    "WeightSet",
    "basis_r_factors",
    "build_truncated_basis",
    "compute_weights",
    "project_to_bases",
    "recompress",
    "row_sets",
]


@dataclass
class WeightSet:
    side: str
    B: dict = field(default_factory=dict)

    def __getitem__(self, t):
        return self.B[t]


@dataclass
class BasisChange:
    R: dict = field(default_factory=dict)

    def __getitem__(self, t):
        return self.R[t]


@dataclass
class RowSets:
    row: list
    row_star: list

    @property
    def rho(self) -> list:
        return [len(r) for r in self.row]

    @property
    def tau(self) -> list:
        return [len(r) for r in self.row_star]


def row_sets(G: H2Matrix, side: str = "row") -> RowSets:
    """``row(t)`` and ``row*(t) = row(t) + row*(father)`` for every cluster."""
    tree = G.bt.rows if side == "row" else G.bt.cols
    part = G.row_partners if side == "row" else G.col_partners
    row = [list(part(t)) for t in range(tree.size)]
    star: list = [None] * tree.size
    for t in range(tree.size):
        f = tree.father[t]
        star[t] = (star[f] if f >= 0 else []) + [(t, s) for s in row[t]]
    return RowSets(row, star)


# ---------------------------------------------------------------------------
# subtree kernels
# ---------------------------------------------------------------------------

def basis_r_factors(basis: ClusterBasis, root: int = 0,
                    V: Optional[Callable] = None, E: Optional[Callable] = None) -> list:
    """Triangular factors ``R_t`` of the QR decompositions of the materialized basis.

    Computed bottom-up: leaves from ``V_t``, fathers from the stacked
    ``R_{t'} E_{t'}`` of their sons.  ``V``/``E`` override the stored leaf and
    transfer matrices (used for extended bases).
    """
    tree = basis.tree
    V = V or (lambda t: basis.leaf[t])
    E = E or (lambda t: basis.transfer[t])
    R: list = [None] * tree.size
    for t in reversed(tree.subtree(root)):
        if tree.is_leaf(t):
            R[t] = qr_r(V(t))
        else:
            R[t] = qr_r(np.vstack([matmul(R[c], E(c)) for c in tree.sons[t]]))
    return R


def block_row_parts(t, partners, coupling, r_other, r_self=None) -> list:
    """Rows ``R_{W,s} S_{t,s}^T`` of the own blocks of ``t``.

    With ``r_self`` each part is divided by the Frobenius norm of its block
    ``V_t S W_s^T`` (blockwise-relative weighting); zero blocks are dropped.
    """
    parts = []
    for s in partners(t):
        S = coupling(t, s)
        if S.size:
            P = matmul(r_other(s), S.T)
            if r_self is not None:
                nrm = np.linalg.norm(matmul(P, r_self(t).T), 2)
                if nrm == 0.0:
                    continue
                P = P / nrm
            parts.append(P)
    return parts


def inherit_scale(tree, t: int) -> float:
    """Factor applied to the father's weight when it is passed down to ``t``.

    A block of the father is split among its sons; restricted to one son it
    is truncated again there.  Enlarging the inherited weight by
    ``sqrt(|father| / |t|)`` keeps the sum of these local errors over a whole
    level within the block's own tolerance.
    """
    return float(np.sqrt(tree.card(tree.father[t]) / tree.card(t)))


def weights_subtree(tree, root: int, E: Callable, partners: Callable, coupling: Callable,
                    r_other: Callable, seed: Optional[np.ndarray] = None,
                    r_self: Optional[Callable] = None) -> dict:
    """Top-down weights ``B_t`` for ``t`` in the subtree of ``root``.

    ``coupling(t, s)`` returns the coupling oriented ``k_t x k_s``;
    ``r_other(s)`` the R factor of the partner basis; ``seed`` is the weight
    inherited by ``root`` from outside the subtree, already multiplied by
    ``E_root^T`` (and by :func:`inherit_scale` in blockwise mode).
    ``r_self`` switches on blockwise scaling.
    """
    B: dict = {}
    for t in tree.subtree(root):
        parts = block_row_parts(t, partners, coupling, r_other, r_self)
        if t == root:
            if seed is not None and seed.shape[0]:
                parts.append(seed)
        else:
            Bf = B[tree.father[t]]
            if Bf.shape[0]:
                P = matmul(Bf, E(t).T)
                parts.append(P if r_self is None else inherit_scale(tree, t) * P)
        B[t] = qr_r(np.vstack(parts)) if parts else np.zeros((0, 0))
    return B


def truncate_subtree(tree, root: int, V: Callable, E: Callable, B: dict,
                     ctl: TruncationControl):
    """Truncated orthogonal nested basis for the subtree of ``root``.

    Returns ``(leaf, transfer, rank, R)`` dicts; ``transfer`` holds new
    transfer matrices for every son inside the subtree and ``R[t] = Q_t^T
    V_t`` compares new and old bases.
    """
    cut = ctl.basis_cutoff()
    leaf, transfer, rank, R = {}, {}, {}, {}
    for t in reversed(tree.subtree(root)):
        if tree.is_leaf(t):
            Vt = V(t)
        else:
            Vt = np.vstack([matmul(R[c], E(c)) for c in tree.sons[t]])
        Bt = B[t]
        if Bt is None or Bt.shape[0] == 0 or Vt.shape[1] == 0:
            Q = np.zeros((Vt.shape[0], 0))
        else:
            Q, _, _ = svd_truncated(matmul(Vt, Bt.T), cut)
        rank[t] = Q.shape[1]
        R[t] = matmul(Q.T, Vt)
        if tree.is_leaf(t):
            leaf[t] = Q
        else:
            off = 0
            for c in tree.sons[t]:
                kc = rank[c]
                transfer[c] = Q[off:off + kc].copy()
                off += kc
    return leaf, transfer, rank, R


# ---------------------------------------------------------------------------
# public operations on whole matrices
# ---------------------------------------------------------------------------

def compute_weights(G: H2Matrix, side: str = "row", blockwise: bool = False) -> WeightSet:
    """Weights for all row clusters (``side="row"``) or column clusters."""
    if side == "row":
        tree, basis = G.bt.rows, G.row
        r_other, r_own = G.basis_r("col"), G.basis_r("row")
        partners, coupling = G.row_partners, (lambda t, s: G.coupling[(t, s)])
    elif side == "column" or side == "col":
        tree, basis = G.bt.cols, G.col
        r_other, r_own = G.basis_r("row"), G.basis_r("col")
        partners, coupling = G.col_partners, (lambda s, t: G.coupling[(t, s)].T)
    else:
        raise ValueError(f"unknown side {side!r}")
    B = weights_subtree(tree, 0, lambda t: basis.transfer[t], partners, coupling,
                        lambda s: r_other[s], r_self=r_own.__getitem__ if blockwise else None)
    return WeightSet("row" if side == "row" else "column", B)


def build_truncated_basis(G: H2Matrix, weights: WeightSet, ctl: TruncationControl,
                          side: Optional[str] = None):
    """New orthogonal nested basis chosen from the weighted block rows, plus ``R_t``."""
    side = side or weights.side
    basis = G.row if side == "row" else G.col
    tree = basis.tree
    leaf, transfer, rank, R = truncate_subtree(
        tree, 0, lambda t: basis.leaf[t], lambda t: basis.transfer[t], weights.B, ctl)
    nb = ClusterBasis(tree)
    nb.orthogonal = True
    for t in range(tree.size):
        nb.rank[t] = rank[t]
        if tree.is_leaf(t):
            nb.leaf[t] = leaf[t]
        if t in transfer:
            nb.transfer[t] = transfer[t]
    return nb, BasisChange(R)


def project_to_bases(G: H2Matrix, row_change: BasisChange, col_change: BasisChange,
                     new_row: ClusterBasis, new_col: ClusterBasis) -> H2Matrix:
    """Switch ``G`` to new bases: ``S_b <- R_t S_b R_s^T`` on every admissible leaf."""
    out = H2Matrix(G.bt, new_row, new_col, lower_only=G.lower_only)
    for (t, s), S in G.coupling.items():
        Rt, Rs = row_change.R[t], col_change.R[s]
        if Rt.shape[1] != S.shape[0] or Rs.shape[1] != S.shape[1]:
            raise ValueError(f"basis change does not conform to coupling ({t}, {s})")
        out.coupling[(t, s)] = matmul(matmul(Rt, S), Rs.T)
    out.near = {k: v.copy() for k, v in G.near.items()}
    if new_row.orthogonal:
        out._row_r = [np.eye(k) for k in new_row.rank]
    if new_col.orthogonal:
        out._col_r = [np.eye(k) for k in new_col.rank]
    return out


def recompress(G: H2Matrix, ctl: TruncationControl) -> H2Matrix:
    """Approximate ``G`` by an H2-matrix with truncated orthogonal nested bases."""
    wr = compute_weights(G, "row", ctl.blockwise)
    wc = compute_weights(G, "column", ctl.blockwise)
    new_row, ch_row = build_truncated_basis(G, wr, ctl)
    new_col, ch_col = build_truncated_basis(G, wc, ctl)
    return project_to_bases(G, ch_row, ch_col, new_row, new_col)
