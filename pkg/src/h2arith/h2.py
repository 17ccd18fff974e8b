"""H2-matrix representation: nested cluster bases, coupling and nearfield blocks.

An :class:`H2Matrix` lives entirely in the permuted index order of its
cluster trees.  Admissible leaves ``(t, s)`` store ``S`` with
``G|_{t x s} = V_t S W_s^T``; inadmissible leaves store dense blocks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .cluster import (ADMISSIBLE, INADMISSIBLE, BlockTree, ClusterTree,
                      build_block_tree)
from .linalg_core import WORK, TruncationControl, matmul

__all__ = [
    "ClusterBasis",
    "H2Matrix",
    "StorageReport",
    "densify",
    "h2_from_dense",
    "h2_from_sparse",
    "load_h2",
    "materialize_basis",
    "matvec",
    "random_h2",
    "rmatvec",
    "save_h2",
    "storage_report",
]

DENSE_GUARD = 4096 * 4096


class ClusterBasis:
    """Nested cluster basis: leaf matrices ``V_t`` and transfer matrices ``E_t``.

    ``transfer[t]`` has shape ``rank[t] x rank[father(t)]`` so that the
    father's basis restricted to ``t`` equals ``V_t E_t``.
    """

    def __init__(self, tree: ClusterTree):
        self.tree = tree
        self.rank = [0] * tree.size
        self.leaf: list = [None] * tree.size
        self.transfer: list = [None] * tree.size
        self.orthogonal = False

    @classmethod
    def zeros(cls, tree: ClusterTree) -> "ClusterBasis":
        cb = cls(tree)
        for t in range(tree.size):
            if tree.is_leaf(t):
                cb.leaf[t] = np.zeros((tree.card(t), 0))
            if tree.father[t] >= 0:
                cb.transfer[t] = np.zeros((0, 0))
        cb.orthogonal = True
        return cb

    def copy(self) -> "ClusterBasis":
        cb = ClusterBasis(self.tree)
        cb.rank = list(self.rank)
        cb.leaf = [None if v is None else v.copy() for v in self.leaf]
        cb.transfer = [None if e is None else e.copy() for e in self.transfer]
        cb.orthogonal = self.orthogonal
        return cb

    def scalars(self) -> int:
        return sum(v.size for v in self.leaf if v is not None) + \
            sum(e.size for e in self.transfer if e is not None)

    def check_shapes(self) -> None:
        tree = self.tree
        for t in range(tree.size):
            if tree.is_leaf(t):
                assert self.leaf[t].shape == (tree.card(t), self.rank[t]), t
            f = tree.father[t]
            if f >= 0:
                assert self.transfer[t].shape == (self.rank[t], self.rank[f]), t


def materialize_basis(basis: ClusterBasis, t: int) -> np.ndarray:
    """Full ``|t| x k_t`` basis matrix of cluster ``t``."""
    tree = basis.tree
    if tree.is_leaf(t):
        return basis.leaf[t]
    parts = [matmul(materialize_basis(basis, c), basis.transfer[c]) for c in tree.sons[t]]
    return np.vstack(parts)


def _materialize_all(basis: ClusterBasis, root: int = 0) -> dict:
    tree = basis.tree
    out = {}
    for t in reversed(tree.subtree(root)):
        if tree.is_leaf(t):
            out[t] = basis.leaf[t]
        else:
            out[t] = np.vstack([matmul(out[c], basis.transfer[c]) for c in tree.sons[t]])
    return out


class H2Matrix:
    """H2-matrix over a block tree with row basis ``row`` and column basis ``col``.

    ``lower_only=True`` marks triangular storage: admissible and dense
    blocks strictly above the diagonal are absent and read as zero.
    """

    def __init__(self, bt: BlockTree, row: ClusterBasis, col: ClusterBasis,
                 coupling: Optional[dict] = None, near: Optional[dict] = None,
                 lower_only: bool = False):
        self.bt = bt
        self.row = row
        self.col = col
        self.coupling = {} if coupling is None else coupling
        self.near = {} if near is None else near
        self.lower_only = lower_only
        self._row_r = None
        self._col_r = None

    # -- structure -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return (self.bt.rows.n, self.bt.cols.n)

    @classmethod
    def zeros(cls, bt: BlockTree, lower_only: bool = False) -> "H2Matrix":
        rows, cols = bt.rows, bt.cols
        G = cls(bt, ClusterBasis.zeros(rows), ClusterBasis.zeros(cols), lower_only=lower_only)
        for b in range(bt.size):
            t, s = bt.t[b], bt.s[b]
            if lower_only and G.is_upper(t, s):
                continue
            if bt.kind[b] == ADMISSIBLE:
                G.coupling[(t, s)] = np.zeros((0, 0))
            elif bt.kind[b] == INADMISSIBLE:
                G.near[(t, s)] = np.zeros((rows.card(t), cols.card(s)))
        return G

    def is_upper(self, t: int, s: int) -> bool:
        return self.bt.rows.start[t] < self.bt.cols.start[s]

    def row_partners(self, t: int) -> list:
        """Admissible column partners ``row(t)`` actually stored."""
        if self.lower_only:
            return [s for s in self.bt.row_adm[t] if (t, s) in self.coupling]
        return self.bt.row_adm[t]

    def col_partners(self, s: int) -> list:
        if self.lower_only:
            return [t for t in self.bt.col_adm[s] if (t, s) in self.coupling]
        return self.bt.col_adm[s]

    def copy(self) -> "H2Matrix":
        row = self.row.copy()
        col = row if self.col is self.row else self.col.copy()
        return H2Matrix(self.bt, row, col,
                        {k: v.copy() for k, v in self.coupling.items()},
                        {k: v.copy() for k, v in self.near.items()},
                        self.lower_only)

    @property
    def T(self) -> "H2Transpose":
        return H2Transpose(self)

    # -- operand interface used by the arithmetic ---------------------------
    def kind(self, t: int, s: int) -> int:
        return self.bt.kind[self.bt.lookup[(t, s)]]

    def S(self, t: int, s: int):
        return self.coupling.get((t, s))

    def N(self, t: int, s: int):
        return self.near.get((t, s))

    @property
    def rowb(self) -> ClusterBasis:
        return self.row

    @property
    def colb(self) -> ClusterBasis:
        return self.col

    def apply(self, t: int, s: int, X: np.ndarray) -> np.ndarray:
        return block_apply(self, t, s, X, trans=False)

    def apply_t(self, t: int, s: int, X: np.ndarray) -> np.ndarray:
        return block_apply(self, t, s, X, trans=True)

    # -- basis R factors (QR of the materialized bases), cached --------------
    def basis_r(self, side: str) -> list:
        from .compression import basis_r_factors
        if side == "row":
            if self._row_r is None:
                self._row_r = basis_r_factors(self.row)
            return self._row_r
        if self._col_r is None:
            self._col_r = basis_r_factors(self.col)
        return self._col_r

    def invalidate(self) -> None:
        self._row_r = None
        self._col_r = None

    def __matmul__(self, x):
        return matvec(self, x)


class H2Transpose:
    """Read-only transposed view used as a multiplication operand."""

    def __init__(self, G: H2Matrix):
        self.G = G
        self.bt = G.bt
        self.lower_only = False

    @property
    def shape(self):
        return self.G.shape[::-1]

    @property
    def T(self):
        return self.G

    def kind(self, t, s):
        return self.G.kind(s, t)

    def S(self, t, s):
        m = self.G.coupling.get((s, t))
        return None if m is None else m.T

    def N(self, t, s):
        m = self.G.near.get((s, t))
        return None if m is None else m.T

    @property
    def rowb(self):
        return self.G.col

    @property
    def colb(self):
        return self.G.row

    def apply(self, t, s, X):
        return block_apply(self.G, s, t, X, trans=True)

    def apply_t(self, t, s, X):
        return block_apply(self.G, s, t, X, trans=False)

    def __matmul__(self, x):
        return block_apply(self.G, 0, 0, np.asarray(x, dtype=float), trans=True)


def block_apply(G: H2Matrix, t0: int, s0: int, X: np.ndarray, trans: bool = False) -> np.ndarray:
    """``G|_{t0 x s0} @ X`` or, with ``trans``, ``(G|_{t0 x s0})^T @ X``."""
    bt = G.bt
    rows, cols = bt.rows, bt.cols
    vec = X.ndim == 1
    if vec:
        X = X[:, None]
    adm, near = bt.leaves_below(bt.lookup[(t0, s0)])
    if trans:
        in_tree, in_basis, in_root = rows, G.row, t0
        out_tree, out_basis, out_root = cols, G.col, s0
    else:
        in_tree, in_basis, in_root = cols, G.col, s0
        out_tree, out_basis, out_root = rows, G.row, t0
    in_off = in_tree.start[in_root]
    out_off = out_tree.start[out_root]
    if in_tree.card(in_root) != X.shape[0]:
        raise ValueError(f"length mismatch: block expects {in_tree.card(in_root)} rows, got {X.shape[0]}")
    m = X.shape[1]
    Y = np.zeros((out_tree.card(out_root), m))

    coupling = G.coupling
    if adm:
        # forward transform within the input subtree
        xh = {}
        leaf, transfer, sons = in_basis.leaf, in_basis.transfer, in_tree.sons
        start, stop = in_tree.start, in_tree.stop
        for c in reversed(in_tree.subtree(in_root)):
            if not sons[c]:
                V = leaf[c]
                xh[c] = matmul(V.T, X[start[c] - in_off:stop[c] - in_off])
            else:
                acc = None
                for son in sons[c]:
                    part = matmul(transfer[son].T, xh[son])
                    acc = part if acc is None else acc + part
                xh[c] = acc
        yh = {}
        for (t, s) in adm:
            S = coupling.get((t, s))
            if S is None or S.size == 0:
                continue
            if trans:
                contrib = matmul(S.T, xh[t])
                key = s
            else:
                contrib = matmul(S, xh[s])
                key = t
            if key in yh:
                yh[key] += contrib
            else:
                yh[key] = contrib
        if yh:
            leaf, transfer, sons = out_basis.leaf, out_basis.transfer, out_tree.sons
            start, stop = out_tree.start, out_tree.stop
            for c in out_tree.subtree(out_root):
                y = yh.get(c)
                if y is None:
                    continue
                if not sons[c]:
                    Y[start[c] - out_off:stop[c] - out_off] += matmul(leaf[c], y)
                else:
                    for son in sons[c]:
                        part = matmul(transfer[son], y)
                        if son in yh:
                            yh[son] = yh[son] + part
                        else:
                            yh[son] = part
    rs, cs = rows.start, cols.start
    for (t, s) in near:
        N = G.near.get((t, s))
        if N is None:
            continue
        if trans:
            Y[cs[s] - out_off:cs[s] - out_off + N.shape[1]] += matmul(
                N.T, X[rs[t] - in_off:rs[t] - in_off + N.shape[0]])
        else:
            Y[rs[t] - out_off:rs[t] - out_off + N.shape[0]] += matmul(
                N, X[cs[s] - in_off:cs[s] - in_off + N.shape[1]])
    return Y[:, 0] if vec else Y


def matvec(G: H2Matrix, x) -> np.ndarray:
    """``G @ x`` via forward transform, coupling, backward transform and nearfield."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != G.shape[1]:
        raise ValueError(f"length mismatch: matrix has {G.shape[1]} columns, vector {x.shape[0]}")
    return block_apply(G, 0, 0, x)


def rmatvec(G: H2Matrix, x) -> np.ndarray:
    """``G^T @ x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != G.shape[0]:
        raise ValueError("length mismatch")
    return block_apply(G, 0, 0, x, trans=True)


def densify(G, guard: int = DENSE_GUARD) -> np.ndarray:
    """Dense matrix (permuted order) represented by ``G`` or a transposed view."""
    if isinstance(G, H2Transpose):
        return densify(G.G, guard).T
    m, n = G.shape
    if m * n > guard:
        raise MemoryError(f"densify of {m}x{n} exceeds the size guard")
    bt = G.bt
    rows, cols = bt.rows, bt.cols
    D = np.zeros((m, n))
    Vs = _materialize_all(G.row)
    Ws = Vs if G.col is G.row else _materialize_all(G.col)
    for (t, s), S in G.coupling.items():
        if S.size:
            D[rows.start[t]:rows.stop[t], cols.start[s]:cols.stop[s]] = Vs[t] @ S @ Ws[s].T
    for (t, s), N in G.near.items():
        D[rows.start[t]:rows.stop[t], cols.start[s]:cols.stop[s]] = N
    return D


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _norm_estimate(B: np.ndarray, iters: int = 4, seed: int = 0) -> float:
    """Lower bound for ``||B||_2`` by a few power iterations."""
    if B.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(B.shape[1])
    est = 0.0
    for _ in range(iters):
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x /= nx
        y = B @ x
        est = max(est, float(np.linalg.norm(y)))
        x = B.T @ y
    return est


def _tail_rank(sigma: np.ndarray, delta: float, exact: bool) -> int:
    if sigma.size == 0:
        return 0
    if exact:
        return int(np.count_nonzero(sigma > 0.0))
    # smallest r with sqrt(sum_{i>r} sigma_i^2) <= delta
    tail = np.sqrt(np.cumsum((sigma ** 2)[::-1]))[::-1]
    keep = np.nonzero(tail > delta)[0]
    return int(keep[-1]) + 1 if keep.size else 0


def _dense_basis(tree: ClusterTree, partners: list, fetch, weight: dict,
                 ctl: TruncationControl, store: Optional[dict]) -> ClusterBasis:
    """Orthogonal nested basis approximating every scaled block row ``row*(t)``.

    The columns of ``row*(t)`` are laid out father-first, so the layout of a
    father is a prefix of the layout of each son and the sons' projected
    block rows can be stacked directly.
    """
    basis = ClusterBasis(tree)
    basis.orthogonal = True
    exact = ctl.rel_tol == 0.0 and ctl.abs_tol == 0.0
    delta = ctl.rel_tol / (2.0 * np.sqrt(tree.depth + 1.0))

    own = [[(s, weight[(t, s)]) for s in partners[t] if weight[(t, s)] > 0.0]
           for t in range(tree.size)]
    width_in = [0] * tree.size   # columns inherited from ancestors
    width = [0] * tree.size
    for t in range(tree.size):
        f = tree.father[t]
        width_in[t] = width[f] if f >= 0 else 0
        width[t] = width_in[t] + sum(fetch.col_card(s) for s, _ in own[t])

    def truncate(Z):
        if Z.shape[0] == 0 or Z.shape[1] == 0:
            return np.zeros((Z.shape[0], 0))
        WORK.units += 4 * Z.shape[0] * Z.shape[1] * min(Z.shape)
        U, sig, _ = np.linalg.svd(Z, full_matrices=False)
        r = _tail_rank(sig, delta, exact)
        if ctl.max_rank is not None:
            r = min(r, ctl.max_rank)
        return U[:, :r].copy()

    proj: dict = {}
    for t in reversed(range(tree.size)):
        if tree.is_leaf(t):
            chain = [own[a] for a in reversed(tree.pred(t))]
            blocks = [fetch(t, s) * w for lst in chain for s, w in lst]
            Z = np.hstack(blocks) if blocks else np.zeros((tree.card(t), 0))
            Q = truncate(Z)
            basis.leaf[t] = Q
        else:
            t1, t2 = tree.sons[t]
            w = width[t]
            Z = np.vstack([proj.pop(t1)[:, :w], proj.pop(t2)[:, :w]])
            Q = truncate(Z)
            k1 = basis.rank[t1]
            basis.transfer[t1] = Q[:k1].copy()
            basis.transfer[t2] = Q[k1:].copy()
        basis.rank[t] = Q.shape[1]
        P = matmul(Q.T, Z)
        if store is not None:
            off = width_in[t]
            for s, wgt in own[t]:
                c = fetch.col_card(s)
                store[(t, s)] = P[:, off:off + c] / wgt
                off += c
        proj[t] = P
    return basis


class _Fetcher:
    def __init__(self, get, row_tree, col_tree, transpose=False):
        self.get = get
        self.rt = row_tree
        self.ct = col_tree
        self.transpose = transpose

    def col_card(self, s):
        return self.ct.card(s)

    def __call__(self, t, s):
        rt, ct = self.rt, self.ct
        if self.transpose:
            return self.get(ct.start[s], ct.stop[s], rt.start[t], rt.stop[t]).T
        return self.get(rt.start[t], rt.stop[t], ct.start[s], ct.stop[s])


def h2_from_dense(M: Union[np.ndarray, Callable], bt: BlockTree,
                  ctl: TruncationControl = TruncationControl(1e-6),
                  symmetric: bool = False, guard: int = DENSE_GUARD) -> H2Matrix:
    """Compress a dense matrix (already in permuted order) into H2 form.

    ``M`` may be an array or a callable ``M(r0, r1, c0, c1)`` returning the
    block with rows ``r0:r1`` and columns ``c0:c1``.  Each admissible block is
    scaled by the inverse of its norm before the nested bases are built, so
    the truncation is relative per block.  ``symmetric=True`` reuses the row
    basis for the columns (valid for symmetric ``M`` on a square tree).
    """
    rows, cols = bt.rows, bt.cols
    if callable(M):
        get = M
    else:
        M = np.asarray(M, dtype=float)
        if M.shape != (rows.n, cols.n):
            raise ValueError(f"dense matrix shape {M.shape} does not match the block tree")
        get = lambda r0, r1, c0, c1: M[r0:r1, c0:c1]  # noqa: E731
    if rows.n * cols.n > guard:
        raise MemoryError("h2_from_dense size guard exceeded")

    weight = {}
    for (t, s) in bt.admissible_leaves():
        B = get(rows.start[t], rows.stop[t], cols.start[s], cols.stop[s])
        nb = _norm_estimate(B)
        weight[(t, s)] = 1.0 / nb if nb > 0.0 else 0.0

    store: dict = {}
    row = _dense_basis(rows, bt.row_adm, _Fetcher(get, rows, cols), weight, ctl, store)
    if symmetric and rows is cols:
        col = row
    else:
        wt = {(s, t): w for (t, s), w in weight.items()}
        col = _dense_basis(cols, bt.col_adm, _Fetcher(get, rows, cols, transpose=True), wt, ctl, None)
    Ws = _materialize_all(col)
    G = H2Matrix(bt, row, col)
    for (t, s) in bt.admissible_leaves():
        P = store.get((t, s))
        if P is None:
            G.coupling[(t, s)] = np.zeros((row.rank[t], col.rank[s]))
        else:
            G.coupling[(t, s)] = matmul(P, Ws[s])
    for (t, s) in bt.inadmissible_leaves():
        G.near[(t, s)] = np.array(get(rows.start[t], rows.stop[t], cols.start[s], cols.stop[s]),
                                  dtype=float, copy=True)
    return G


def h2_from_sparse(S, bt: BlockTree, permuted: bool = False) -> H2Matrix:
    """Embed a sparse matrix whose nonzeros all lie in inadmissible leaves.

    The admissible part is zero, so all cluster bases have rank 0.
    ``S`` is given in original index order unless ``permuted`` is set.
    """
    rows, cols = bt.rows, bt.cols
    A = sp.csr_matrix(S, dtype=float)
    A.eliminate_zeros()
    if A.shape != (rows.n, cols.n):
        raise ValueError(f"sparse matrix shape {A.shape} does not match the block tree")
    if not permuted:
        A = A[rows.perm][:, cols.perm].tocsr()
    G = H2Matrix.zeros(bt)
    found = 0
    for (t, s) in bt.inadmissible_leaves():
        blk = A[rows.start[t]:rows.stop[t], cols.start[s]:cols.stop[s]]
        found += blk.nnz
        G.near[(t, s)] = blk.toarray()
    if found != A.nnz:
        coo = A.tocoo()
        for i, j in zip(coo.row, coo.col):
            b = _locate(bt, int(i), int(j))
            if bt.kind[b] != INADMISSIBLE:
                oi, oj = (i, j) if permuted else (rows.perm[i], cols.perm[j])
                raise ValueError(f"nonzero entry ({oi}, {oj}) falls in admissible block "
                                 f"({bt.t[b]}, {bt.s[b]})")
    return G


def _locate(bt: BlockTree, i: int, j: int) -> int:
    rows, cols = bt.rows, bt.cols
    b = 0
    while bt.sons[b]:
        for c in bt.sons[b]:
            t, s = bt.t[c], bt.s[c]
            if rows.start[t] <= i < rows.stop[t] and cols.start[s] <= j < cols.stop[s]:
                b = c
                break
    return b


def random_h2(bt: BlockTree, rank: int = 4, seed: int = 0, decay: float = 1.0,
              near_scale: float = 1.0) -> H2Matrix:
    """Random H2-matrix with orthogonal nested bases (for tests and demos)."""
    rng = np.random.default_rng(seed)

    def rand_basis(tree):
        cb = ClusterBasis(tree)
        cb.orthogonal = True
        for t in reversed(range(tree.size)):
            if tree.is_leaf(t):
                k = min(rank, tree.card(t))
                Q, _ = np.linalg.qr(rng.standard_normal((tree.card(t), k)))
                cb.leaf[t] = Q
                cb.rank[t] = k
            else:
                ks = [cb.rank[c] for c in tree.sons[t]]
                k = min(rank, sum(ks))
                Q, _ = np.linalg.qr(rng.standard_normal((sum(ks), k)))
                cb.rank[t] = k
                off = 0
                for c, kc in zip(tree.sons[t], ks):
                    cb.transfer[c] = Q[off:off + kc].copy()
                    off += kc
        return cb

    row = rand_basis(bt.rows)
    col = row if bt.rows is bt.cols and decay < 0 else rand_basis(bt.cols)
    G = H2Matrix(bt, row, col)
    for (t, s) in bt.admissible_leaves():
        dist = bt.rows.level[t]
        G.coupling[(t, s)] = rng.standard_normal((row.rank[t], col.rank[s])) * decay ** dist
    for (t, s) in bt.inadmissible_leaves():
        G.near[(t, s)] = near_scale * rng.standard_normal((bt.rows.card(t), bt.cols.card(s)))
    return G


@dataclass
class StorageReport:
    coupling_scalars: int
    nearfield_scalars: int
    basis_scalars: int
    total_bytes: int
    bytes_per_row: float

    @property
    def kb_per_row(self) -> float:
        return self.bytes_per_row / 1024.0


def storage_report(G: H2Matrix, scalar_bytes: int = 8) -> StorageReport:
    """Exact scalar counts; triangular storage counts only the lower half of diagonal blocks."""
    coup = sum(S.size for S in G.coupling.values())
    near = 0
    for (t, s), N in G.near.items():
        if G.lower_only and t == s:
            m = N.shape[0]
            near += m * (m + 1) // 2
        else:
            near += N.size
    basis = G.row.scalars() + (0 if G.col is G.row else G.col.scalars())
    total = (coup + near + basis) * scalar_bytes
    return StorageReport(coup, near, basis, total, total / G.shape[0])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FORMAT = "h2arith-h2matrix"
_VERSION = 1


def _tree_arrays(prefix: str, tree: ClusterTree, out: dict) -> None:
    out[prefix + "points"] = tree.points
    out[prefix + "perm"] = tree.perm
    out[prefix + "start"] = np.asarray(tree.start)
    out[prefix + "stop"] = np.asarray(tree.stop)
    out[prefix + "father"] = np.asarray(tree.father)
    out[prefix + "level"] = np.asarray(tree.level)
    out[prefix + "last"] = np.asarray(tree.last)
    out[prefix + "lo"] = tree.lo
    out[prefix + "hi"] = tree.hi
    out[prefix + "split"] = np.asarray([1 if x == "pair" else 0 for x in tree.split])


def _tree_from(prefix: str, z) -> ClusterTree:
    tree = ClusterTree(points=z[prefix + "points"], perm=z[prefix + "perm"])
    tree.start = z[prefix + "start"].tolist()
    tree.stop = z[prefix + "stop"].tolist()
    tree.father = z[prefix + "father"].tolist()
    tree.level = z[prefix + "level"].tolist()
    tree.last = z[prefix + "last"].tolist()
    tree.lo = z[prefix + "lo"]
    tree.hi = z[prefix + "hi"]
    tree.split = ["pair" if x else "geo" for x in z[prefix + "split"].tolist()]
    sons = [[] for _ in tree.start]
    for t, f in enumerate(tree.father):
        if f >= 0:
            sons[f].append(t)
    tree.sons = [tuple(x) for x in sons]
    return tree


def save_h2(G: H2Matrix, path) -> None:
    """Write ``G`` to a ``.npz`` file with a JSON header (format name, version)."""
    bt = G.bt
    out: dict = {}
    same = bt.rows is bt.cols
    header = {"format": _FORMAT, "version": _VERSION, "eta": bt.eta, "square_tree": same,
              "lower_only": G.lower_only, "shared_basis": G.col is G.row}
    out["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    _tree_arrays("rt_", bt.rows, out)
    if not same:
        _tree_arrays("ct_", bt.cols, out)
    for name, basis in (("rb", G.row), ("cb", G.col)):
        out[name + "_rank"] = np.asarray(basis.rank)
        for t, V in enumerate(basis.leaf):
            if V is not None:
                out[f"{name}_V_{t}"] = V
        for t, E in enumerate(basis.transfer):
            if E is not None:
                out[f"{name}_E_{t}"] = E
    for (t, s), S in G.coupling.items():
        out[f"S_{t}_{s}"] = S
    for (t, s), N in G.near.items():
        out[f"N_{t}_{s}"] = N
    np.savez_compressed(path, **out)


def load_h2(path) -> H2Matrix:
    z = np.load(path)
    header = json.loads(bytes(z["header"]).decode())
    if header.get("format") != _FORMAT or header.get("version") != _VERSION:
        raise ValueError(f"unsupported H2 dump header {header}")
    rows = _tree_from("rt_", z)
    cols = rows if header["square_tree"] else _tree_from("ct_", z)
    bt = build_block_tree(rows, cols, header["eta"])
    bases = {}
    for name, tree in (("rb", rows), ("cb", cols)):
        cb = ClusterBasis(tree)
        cb.rank = z[name + "_rank"].tolist()
        for t in range(tree.size):
            if f"{name}_V_{t}" in z:
                cb.leaf[t] = z[f"{name}_V_{t}"]
            if f"{name}_E_{t}" in z:
                cb.transfer[t] = z[f"{name}_E_{t}"]
        bases[name] = cb
    col = bases["rb"] if header["shared_basis"] else bases["cb"]
    G = H2Matrix(bt, bases["rb"], col, lower_only=header["lower_only"])
    for key in z.files:
        if key.startswith("S_"):
            _, t, s = key.split("_")
            G.coupling[(int(t), int(s))] = z[key]
        elif key.startswith("N_"):
            _, t, s = key.split("_")
            G.near[(int(t), int(s))] = z[key]
    return G
