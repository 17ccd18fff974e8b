"""Dense brute-force references for testing.

Everything here is deliberately written against plain numpy and the raw
fields of the data structures, without calling the library kernels it is
meant to check (basis materialization, densify, block_apply, recompression).
Sizes are limited by ``DENSE_LIMIT``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cluster import ADMISSIBLE, INADMISSIBLE, SUBDIVIDED
from .linalg_core import TruncationControl

__all__ = [
    "OracleReport",
    "basis_dense",
    "block_dense",
    "coverage_scan",
    "dense_projection",
    "materialize_block_row",
    "mutate",
    "oracle_check_suite",
    "oracle_densify",
    "untouched_blocks",
]

DENSE_LIMIT = 1024 * 1024


@dataclass
class OracleReport:
    name: str
    error: float
    bound: float
    passed: bool

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: error {self.error:.3e} (bound {self.bound:.3e})"

    def to_dict(self) -> dict:
        return asdict(self)


def _report(name, error, bound) -> OracleReport:
    error = float(error)
    return OracleReport(name, error, float(bound), bool(np.isfinite(error) and error <= bound))


def _guard(m, n):
    if m * n > DENSE_LIMIT:
        raise MemoryError(f"dense oracle refuses {m}x{n}")


# ---------------------------------------------------------------------------
# dense materialization
# ---------------------------------------------------------------------------

def basis_dense(basis, t: int) -> np.ndarray:
    """``V_t`` built directly from the definition by plain recursion."""
    tree = basis.tree
    if not tree.sons[t]:
        return np.array(basis.leaf[t], dtype=float)
    parts = [basis_dense(basis, c) @ basis.transfer[c] for c in tree.sons[t]]
    return np.vstack(parts)


def block_dense(G, t: int, s: int) -> np.ndarray:
    """Dense block ``G|_{t x s}`` for any node ``(t, s)`` of the block tree."""
    bt = G.bt
    rows, cols = bt.rows, bt.cols
    out = np.zeros((rows.stop[t] - rows.start[t], cols.stop[s] - cols.start[s]))
    r0, c0 = rows.start[t], cols.start[s]
    stack = [bt.lookup[(t, s)]]
    while stack:
        b = stack.pop()
        tb, sb = bt.t[b], bt.s[b]
        rs = slice(rows.start[tb] - r0, rows.stop[tb] - r0)
        cs = slice(cols.start[sb] - c0, cols.stop[sb] - c0)
        if bt.kind[b] == SUBDIVIDED:
            stack.extend(bt.sons[b])
        elif bt.kind[b] == ADMISSIBLE:
            S = G.coupling.get((tb, sb))
            if S is not None and S.size:
                out[rs, cs] = basis_dense(G.row, tb) @ S @ basis_dense(G.col, sb).T
        else:
            N = G.near.get((tb, sb))
            if N is not None:
                out[rs, cs] = N
    return out


def oracle_densify(G) -> np.ndarray:
    m, n = G.bt.rows.n, G.bt.cols.n
    _guard(m, n)
    return block_dense(G, 0, 0)


def materialize_block_row(G, t: int, reference: Optional[np.ndarray] = None) -> np.ndarray:
    """Concatenation of ``G|_{t x s}`` over the admissible blocks of ``row*(t)``.

    Blocks ``(t*, s)`` of ancestors ``t*`` are restricted to the rows of ``t``.
    With ``reference`` the blocks are cut from that dense matrix instead.
    """
    bt = G.bt
    rows, cols = bt.rows, bt.cols
    chain = []
    a = t
    while a >= 0:
        chain.append(a)
        a = rows.father[a]
    parts = []
    for a in reversed(chain):
        for s in bt.row_adm[a]:
            if G.lower_only and (a, s) not in G.coupling:
                continue
            if reference is not None:
                B = reference[rows.start[t]:rows.stop[t], cols.start[s]:cols.stop[s]]
            else:
                full = block_dense(G, a, s)
                B = full[rows.start[t] - rows.start[a]:rows.stop[t] - rows.start[a]]
            parts.append(B)
    if not parts:
        return np.zeros((rows.stop[t] - rows.start[t], 0))
    return np.hstack(parts)


def dense_projection(Qt: np.ndarray, M: np.ndarray, Qs: np.ndarray) -> np.ndarray:
    """``Q_t Q_t^T M Q_s Q_s^T``."""
    return Qt @ (Qt.T @ M @ Qs) @ Qs.T


def coverage_scan(bt) -> np.ndarray:
    """Count of leaf blocks covering each matrix entry (all ones for a partition)."""
    rows, cols = bt.rows, bt.cols
    _guard(rows.n, cols.n)
    cover = np.zeros((rows.n, cols.n), dtype=np.int32)
    for b in range(bt.size):
        if bt.kind[b] != SUBDIVIDED:
            t, s = bt.t[b], bt.s[b]
            cover[rows.start[t]:rows.stop[t], cols.start[s]:cols.stop[s]] += 1
    return cover


def untouched_blocks(bt, t0: int, s0: int) -> list:
    """Leaf blocks ``(t, s)`` that a local update on ``(t0, s0)`` must leave bit-identical.

    These are the blocks whose row cluster is neither in the subtree of ``t0``
    nor an ancestor of it, and whose column cluster is neither in the subtree
    of ``s0`` nor an ancestor of it.
    """
    rows, cols = bt.rows, bt.cols

    def related(tree, x, root):
        if root <= x < tree.last[root]:
            return True
        a = root
        while a >= 0:
            if a == x:
                return True
            a = tree.father[a]
        return False

    out = []
    for b in range(bt.size):
        if bt.kind[b] == SUBDIVIDED:
            continue
        t, s = bt.t[b], bt.s[b]
        if not related(rows, t, t0) and not related(cols, s, s0):
            out.append((t, s))
    return out


# ---------------------------------------------------------------------------
# check suite
# ---------------------------------------------------------------------------

def _nestedness_error(basis) -> float:
    tree = basis.tree
    for t in range(tree.size):
        if not tree.sons[t]:
            V = basis.leaf[t]
            if V is None or V.shape != (tree.stop[t] - tree.start[t], basis.rank[t]):
                return np.inf
        for c in tree.sons[t]:
            E = basis.transfer[c]
            if E is None or E.shape != (basis.rank[c], basis.rank[t]):
                return np.inf
    worst = 0.0
    for t in range(tree.size):
        if not tree.sons[t]:
            continue
        Vt = basis_dense(basis, t)
        for c in tree.sons[t]:
            E = basis.transfer[c]
            sub = Vt[tree.start[c] - tree.start[t]:tree.stop[c] - tree.start[t]]
            err = np.max(np.abs(sub - basis_dense(basis, c) @ E), initial=0.0)
            worst = max(worst, err / max(1.0, np.max(np.abs(sub), initial=0.0)))
    return worst


def _orthogonality_error(basis) -> float:
    worst = 0.0
    for t in range(basis.tree.size):
        V = basis_dense(basis, t)
        if V.shape[1]:
            worst = max(worst, np.linalg.norm(V.T @ V - np.eye(V.shape[1]), 2))
    return worst


def _structure_error(G) -> float:
    bt = G.bt
    rows, cols = bt.rows, bt.cols
    bad = 0
    for b in range(bt.size):
        t, s = bt.t[b], bt.s[b]
        if G.lower_only and rows.start[t] < cols.start[s]:
            continue
        if bt.kind[b] == ADMISSIBLE:
            S = G.coupling.get((t, s))
            if S is None or S.shape != (G.row.rank[t], G.col.rank[s]):
                bad += 1
        elif bt.kind[b] == INADMISSIBLE:
            N = G.near.get((t, s))
            if N is None or N.shape != (rows.stop[t] - rows.start[t], cols.stop[s] - cols.start[s]):
                bad += 1
    return float(bad)


def oracle_check_suite(G, reference: np.ndarray, ctl: Optional[TruncationControl] = None,
                       seed: int = 0, block_factor: float = 1.0,
                       global_factor: Optional[float] = None) -> list:
    """Run the structural and accuracy checks of ``G`` against a dense reference.

    ``reference`` is in cluster (permuted) order.  With ``ctl`` the accuracy
    bounds are ``block_factor * max(abs_tol, rel_tol * ||ref_b||_2)`` per
    admissible leaf and ``global_factor * rel_tol * ||ref||_2`` overall
    (default factor: depth + 1); without ``ctl`` the representation must be
    exact to ``1e-10`` relative.
    """
    bt = G.bt
    rows, cols = bt.rows, bt.cols
    reports = []
    cover = coverage_scan(bt)
    reports.append(_report("block partition coverage",
                           float(np.max(np.abs(cover - 1), initial=0)), 0.0))
    reports.append(_report("coupling and nearfield conformity", _structure_error(G), 0.0))
    bases = [("row", G.row)] if G.col is G.row else [("row", G.row), ("column", G.col)]
    broken = False
    for name, basis in bases:
        rep = _report(f"{name} basis nestedness", _nestedness_error(basis), 1e-10)
        reports.append(rep)
        broken |= not np.isfinite(rep.error)
    if broken or reports[1].error:
        return reports
    for name, basis in bases:
        if basis.orthogonal:
            reports.append(_report(f"{name} basis orthogonality", _orthogonality_error(basis), 1e-10))

    D = oracle_densify(G)
    ref = np.asarray(reference, dtype=float)
    nref = np.linalg.norm(ref, 2)
    if ctl is None:
        rel, abs_tol = 1e-10, 0.0
        gfac = 1.0
    else:
        rel, abs_tol = ctl.rel_tol, ctl.abs_tol
        gfac = global_factor if global_factor is not None else rows.depth + 1
    worst = 0.0
    for (t, s) in bt.admissible_leaves():
        if G.lower_only and rows.start[t] < cols.start[s]:
            continue
        rs = slice(rows.start[t], rows.stop[t])
        cs = slice(cols.start[s], cols.stop[s])
        R = ref[rs, cs]
        nb = np.linalg.norm(R, 2)
        bound = block_factor * max(abs_tol, rel * nb)
        err = np.linalg.norm(D[rs, cs] - R, 2)
        worst = max(worst, err / bound if bound > 0 else (0.0 if err == 0 else np.inf))
    reports.append(_report("admissible blocks within truncation bound (ratio)", worst, 1.0))
    near_err = 0.0
    for (t, s) in bt.inadmissible_leaves():
        if G.lower_only and rows.start[t] < cols.start[s]:
            continue
        rs = slice(rows.start[t], rows.stop[t])
        cs = slice(cols.start[s], cols.stop[s])
        near_err = max(near_err, np.max(np.abs(D[rs, cs] - ref[rs, cs]), initial=0.0))
    reports.append(_report("nearfield blocks exact", near_err, 1e-12 * max(nref, 1.0)))
    reports.append(_report("global spectral error", np.linalg.norm(D - ref, 2),
                           gfac * max(abs_tol, rel * nref)))
    from .h2 import matvec  # the only library kernel exercised, checked against the oracle
    x = np.random.default_rng(seed).standard_normal(cols.n)
    y = matvec(G, x)
    reports.append(_report("matvec against dense product", np.linalg.norm(y - D @ x),
                           1e-12 * max(np.linalg.norm(D, 2), 1.0) * np.linalg.norm(x) * 10))
    return reports


def mutate(G, kind: str = "coupling", seed: int = 0):
    """Corrupted copy of ``G`` for mutation tests.

    ``coupling`` perturbs the largest coupling matrix (or gives an empty
    one a non-conforming shape), ``transfer`` changes
    the shape of one transfer matrix (breaking nestedness), ``near`` flips
    the sign of one nearfield block.
    """
    H = G.copy()
    rng = np.random.default_rng(seed)
    if kind == "coupling":
        key = max(H.coupling, key=lambda k: H.coupling[k].size, default=None)
        if key is None:
            raise ValueError("no coupling matrix to corrupt")
        S = H.coupling[key]
        if S.size:
            H.coupling[key] = S + (1.0 + np.abs(S).max()) * rng.standard_normal(S.shape)
        else:
            H.coupling[key] = np.ones((S.shape[0] + 1, S.shape[1] + 1))
    elif kind == "transfer":
        basis = H.row
        tree = basis.tree
        cand = [t for t in range(tree.size) if tree.father[t] >= 0]
        if not cand:
            raise ValueError("no transfer matrix to corrupt")
        t = cand[0]
        E = basis.transfer[t]
        basis.transfer[t] = np.vstack([E, np.ones((1, E.shape[1]))])
    elif kind == "near":
        key = next(iter(H.near))
        H.near[key] = -H.near[key] - 1.0
    else:
        raise ValueError(f"unknown mutation {kind!r}")
    H.invalidate()
    return H
