"""Model problems: 2-D FEM Poisson stiffness matrix and 2-D BEM single layer potential."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .cluster import BlockTree, ClusterTree, build_block_tree, build_cluster_tree
from .h2 import H2Matrix, h2_from_dense, h2_from_sparse
from .linalg_core import TruncationControl

__all__ = [
    "ProblemInstance",
    "assemble_bem_slp",
    "assemble_fem_poisson",
    "default_eps",
    "export_instance",
    "make_instance",
]

FEM_MAX_LEVEL = 9
BEM_MAX_LEVEL = 13

# (eta, eps) per level as listed in the preconditioner tables
FEM_TABLE = {7: (4.0, 3.1e-3), 8: (4.0, 7.7e-4), 9: (4.0, 1.9e-4), 10: (4.0, 4.8e-5),
             11: (4.0, 1.2e-5), 12: (4.0, 3.0e-6)}
BEM_TABLE = {11: (2.0, 1.2e-4), 12: (2.0, 6.1e-5), 13: (2.0, 3.1e-5), 14: (2.0, 1.5e-5),
             15: (2.0, 7.6e-6), 16: (2.0, 3.8e-6), 17: (2.0, 1.9e-6), 18: (2.0, 9.5e-7),
             19: (2.0, 4.8e-7), 20: (2.0, 2.4e-7)}


def default_eps(kind: str, level: int) -> tuple:
    """``(eta, eps)`` from the tables, extrapolated by ``eps ~ h^2`` (fem) or ``eps ~ h`` (bem)."""
    table, order = (FEM_TABLE, 2) if kind == "fem" else (BEM_TABLE, 1)
    if level in table:
        return table[level]
    ref = min(table) if level < min(table) else max(table)
    eta, eps = table[ref]
    return eta, eps * 2.0 ** (order * (ref - level))


@dataclass
class ProblemInstance:
    kind: str
    level: int
    n: int
    matrix: object                 # scipy sparse (fem) or dense ndarray (bem), original order
    points: np.ndarray
    h: float
    eta: float
    eps: float
    first_row: Optional[np.ndarray] = None   # circulant generator (bem)

    def matvec(self, x):
        if self.first_row is not None and self.matrix is None:
            return _circulant_matvec(self.first_row, x)
        return self.matrix @ x


def assemble_fem_poisson(level: int, max_level: int = FEM_MAX_LEVEL) -> ProblemInstance:
    """Piecewise linear FEM for ``-Laplace u = f`` on the unit square, regular mesh.

    The uniform right-triangle mesh gives the 5-point stencil (4 on the
    diagonal, -1 for the four grid neighbours) on the ``(2^l - 1)^2``
    interior nodes, numbered row by row.
    """
    if level < 2:
        raise ValueError("level must be at least 2")
    if level > max_level:
        raise MemoryError(f"FEM level {level} exceeds the desk-scale cap {max_level}")
    m = 2 ** level - 1
    h = 1.0 / 2 ** level
    T = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    I = sp.identity(m)
    A = (sp.kron(I, T) + sp.kron(T, I)).tocsr()
    A.sort_indices()
    g = h * np.arange(1, m + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    pts = np.c_[X.ravel(), Y.ravel()]
    eta, eps = default_eps("fem", level)
    return ProblemInstance("fem", level, m * m, A, pts, h, eta, eps)


def _segment_log_integral(z, d):
    """Antiderivative in ``z`` of ``log sqrt(z^2 + d^2)``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = 0.5 * (z * np.log(z * z + d * d) - 2.0 * z + 2.0 * d * np.arctan2(z, d))
    return np.where((z == 0.0) & (d == 0.0), 0.0, r)


def _graded_rule(q: int, levels: int = 12):
    g, w = np.polynomial.legendre.leggauss(q)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    edges = np.r_[0.0, 0.5 ** np.arange(levels, 0, -1)]
    edges = np.unique(np.r_[edges, 1.0 - edges])
    nodes, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(a + (b - a) * g)
        wts.append((b - a) * w)
    return (g, w), (np.concatenate(nodes), np.concatenate(wts))


def bem_first_row(n: int, quad_order: int = 8, scale: float = 2.0) -> np.ndarray:
    """First row of the circulant Galerkin matrix of ``-(1/2pi) log(|x-y| / scale)``.

    Panels are the chords between ``n`` equispaced points on the unit
    circle.  The inner integral over the column panel is evaluated in closed
    form; the outer integral uses Gauss quadrature, graded towards the
    panel ends for the two neighbours, and the self term is analytic.
    """
    ang = 2.0 * np.pi * np.arange(n + 1) / n
    V = np.c_[np.cos(ang), np.sin(ang)]
    (g, w), (gg, gw) = _graded_rule(quad_order)
    p0, q0 = V[0], V[1]
    L = float(np.linalg.norm(q0 - p0))
    out = np.empty(n)
    out[0] = L * L * (np.log(L / scale) - 1.5)
    for j in range(1, n):
        p, q = V[j], V[j + 1]
        u = (q - p) / L
        xs, ws = (gg, gw) if j in (1, n - 1) else (g, w)
        X = p0 + np.outer(xs, q0 - p0)
        a = (p - X) @ u
        d = np.linalg.norm((p - X) - np.outer(a, u), axis=1)
        inner = _segment_log_integral(a + L, d) - _segment_log_integral(a, d) - L * np.log(scale)
        out[j] = L * np.sum(ws * inner)
    return -out / (2.0 * np.pi)


def _circulant_matvec(row, x):
    # A[i, j] = row[(j - i) mod n]; A is symmetric, so A x = ifft(fft(row) * fft(x))
    lam = np.fft.fft(row).real
    if x.ndim == 1:
        return np.fft.ifft(lam * np.fft.fft(x)).real
    return np.fft.ifft(lam[:, None] * np.fft.fft(x, axis=0), axis=0).real


def assemble_bem_slp(level: int, quad_order: int = 8, dense: bool = True,
                     max_level: int = BEM_MAX_LEVEL) -> ProblemInstance:
    """Galerkin single layer potential with piecewise constants on ``2^(l+2)`` panels.

    Level ``l`` uses ``n = 4 * 2^l`` panels, so level 11 has 8192 unknowns.
    """
    if level < 2:
        raise ValueError("level must be at least 2")
    if level > max_level:
        raise MemoryError(f"BEM level {level} exceeds the desk-scale cap {max_level}")
    n = 4 * 2 ** level
    row = bem_first_row(n, quad_order)
    mid = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    pts = np.c_[np.cos(mid), np.sin(mid)]
    A = None
    if dense:
        idx = np.arange(n)
        A = row[(idx[None, :] - idx[:, None]) % n]
    eta, eps = default_eps("bem", level)
    return ProblemInstance("bem", level, n, A, pts, 2.0 * np.pi / n, eta, eps, first_row=row)


def make_instance(kind: str, level: int, eta: Optional[float] = None,
                  leaf_size: int = 32, eps: Optional[float] = None):
    """Assemble, cluster and convert to H2 form.

    Returns ``(H2Matrix, ClusterTree, BlockTree, ProblemInstance)``; the FEM
    matrix is embedded exactly, the BEM matrix compressed with accuracy
    ``eps`` (default: the instance value).
    """
    if kind == "fem":
        inst = assemble_fem_poisson(level)
        tree = build_cluster_tree(inst.points, leaf_size, "dd", support=inst.h)
    elif kind == "bem":
        inst = assemble_bem_slp(level, dense=False)
        tree = build_cluster_tree(inst.points, leaf_size, "geometric_bisection",
                                  support=0.5 * inst.h)
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    if eta is not None:
        inst.eta = float(eta)
    if eps is not None:
        inst.eps = float(eps)
    bt = build_block_tree(tree, tree, inst.eta)
    if kind == "fem":
        G = h2_from_sparse(inst.matrix, bt)
    else:
        row, perm, n = inst.first_row, tree.perm, inst.n

        def entries(r0, r1, c0, c1):
            return row[(perm[c0:c1][None, :] - perm[r0:r1][:, None]) % n]

        G = h2_from_dense(entries, bt, TruncationControl(inst.eps * 1e-2), symmetric=True,
                          guard=np.inf)
    return G, tree, bt, inst


def export_instance(inst: ProblemInstance, matrix_path, points_path) -> None:
    """Plain-text export: ``i j value`` triplets (0-based) and one point per line."""
    if inst.matrix is None:
        idx = np.arange(inst.n)
        M = inst.first_row[(idx[None, :] - idx[:, None]) % inst.n]
    else:
        M = inst.matrix
    coo = sp.coo_matrix(M)
    with open(matrix_path, "w") as f:
        f.write(f"% {inst.kind} level={inst.level} n={inst.n} nnz={coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {v:.17g}\n")
    np.savetxt(points_path, inst.points, fmt="%.17g")
