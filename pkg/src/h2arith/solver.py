"""Preconditioned conjugate gradients and the convergence-factor estimate."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["SolveStats", "estimate_convergence_factor", "make_preconditioner", "pcg"]


@dataclass
class SolveStats:
    iterations: int
    residual: float
    converged: bool
    time_per_step_per_n: float = 0.0
    err: float = float("nan")
    history: list = field(default_factory=list)


def pcg(A: Callable, precond: Callable, b, tol: float = 1e-8, maxit: int = 500, x0=None):
    """Conjugate gradients for ``A x = b`` with preconditioner ``precond(r) ~ A^{-1} r``.

    Stops once ``||b - A x|| / ||b|| <= tol``.  Returns ``(x, SolveStats)``;
    ``stats.converged`` is False when ``maxit`` steps were not enough.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, True, 0.0, history=[0.0])
    r = b - A(x) if x0 is not None else b.copy()
    hist = [np.linalg.norm(r) / nb]
    if hist[-1] <= tol:
        return x, SolveStats(0, hist[-1], True, 0.0, history=hist)
    z = precond(r)
    p = z.copy()
    rz = r @ z
    t0 = time.perf_counter()
    it = 0
    while it < maxit:
        it += 1
        q = A(p)
        pq = p @ q
        if pq <= 0.0:
            break
        a = rz / pq
        x += a * p
        r -= a * q
        hist.append(np.linalg.norm(r) / nb)
        if hist[-1] <= tol:
            break
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    elapsed = time.perf_counter() - t0
    return x, SolveStats(it, hist[-1], hist[-1] <= tol, elapsed / max(it, 1) / n, history=hist)


def estimate_convergence_factor(A: Callable, precond: Callable, n: int, iters: int = 50,
                                seed: int = 42, rtol: float = 1e-4, AT: Callable = None,
                                precond_T: Callable = None) -> float:
    """Power iteration for ``||I - P A||_2`` with ``P = precond``.

    Iterates on ``M M^T`` with ``M = I - P A``; ``AT``/``precond_T`` default to
    ``A``/``precond`` (symmetric operators).
    """
    AT = AT or A
    precond_T = precond_T or precond

    def M(v):
        return v - precond(A(v))

    def MT(v):
        return v - AT(precond_T(v))

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M(MT(v))
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if lam > 0.0 and abs(lam_new - lam) <= rtol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def make_preconditioner(L, perm=None, R=None) -> Callable:
    """``r -> (L R)^{-1} r`` from triangular factors living in cluster order.

    ``R`` defaults to ``L^T`` (Cholesky).  ``perm`` maps cluster order to the
    original numbering (``perm[i]`` is the original index of position ``i``).
    """
    R = R if R is not None else L.T

    def apply(r):
        rp = r if perm is None else r[perm]
        z = R.solve(0, L.solve(0, rp))
        if perm is None:
            return z
        y = np.empty_like(z)
        y[perm] = z
        return y

    return apply
