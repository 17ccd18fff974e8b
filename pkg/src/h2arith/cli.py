"""Command line driver: preconditioner benchmarks and utility subcommands.

``h2arith bench`` reproduces the FEM/BEM preconditioner tables at desk
scale, ``verify`` runs the dense-oracle checks on a small instance,
``factorize`` stores a Cholesky factor and ``solve`` runs preconditioned CG.
Calling ``h2arith`` with options only is the same as ``h2arith bench``.

Exit codes: 0 success, 1 CG did not converge, 2 structural error
(failed oracle check, guard violation, factorization breakdown).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .arithmetic import (TriangularH2, cholesky_factorize, invert, multiply_add)
from .h2 import densify, load_h2, save_h2, storage_report
from .linalg_core import FactorizationBreakdown, TruncationControl
from .problems import default_eps, make_instance
from .solver import estimate_convergence_factor, make_preconditioner, pcg
from .update import LowRankFactor, add_lowrank_global, add_lowrank_local

__all__ = ["BenchmarkRow", "main", "parse_rows", "emit_rows", "run_benchmark", "verify"]

EXIT_OK, EXIT_NOCONV, EXIT_STRUCT = 0, 1, 2
SUBCOMMANDS = ("bench", "verify", "factorize", "solve")


@dataclass
class BenchmarkRow:
    """One table row: grid, parameters, setup cost and solver behaviour."""

    level: int
    n: int
    eta: float
    eps: float
    setup_time_per_n: float
    mem_per_n_kb: float
    err: float
    m: int
    solve_time_per_n: float


_TYPES = {f.name: (int if f.type in ("int", int) else float) for f in fields(BenchmarkRow)}


def emit_rows(rows, fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps([asdict(r) for r in rows], indent=2)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(_TYPES), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) for k, v in asdict(r).items()})
    return buf.getvalue()


def parse_rows(text: str, fmt: str = "csv") -> list:
    if fmt == "json":
        return [BenchmarkRow(**{k: _TYPES[k](v) for k, v in d.items()}) for d in json.loads(text)]
    reader = csv.DictReader(io.StringIO(text))
    return [BenchmarkRow(**{k: _TYPES[k](v) for k, v in d.items()}) for d in reader]


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _ctl(eps: float) -> TruncationControl:
    return TruncationControl(rel_tol=eps, blockwise=True)


def _dense_reference(kind, tree, inst) -> np.ndarray:
    if kind == "fem":
        A = inst.matrix.toarray()
    else:
        idx = np.arange(inst.n)
        A = inst.first_row[(idx[None, :] - idx[:, None]) % inst.n]
    return A[np.ix_(tree.perm, tree.perm)]


def run_level(kind: str, level: int, eta: Optional[float] = None, eps: Optional[float] = None,
              leaf_size: int = 32, seed: int = 42, oracle: bool = False, log=_log):
    """Assemble, factorize, solve; returns ``(BenchmarkRow, converged, oracle_reports)``."""
    G, tree, bt, inst = make_instance(kind, level, eta=eta, leaf_size=leaf_size, eps=eps)
    t0 = time.perf_counter()
    L = cholesky_factorize(G, _ctl(inst.eps))
    setup = time.perf_counter() - t0
    mem = storage_report(L.M).kb_per_row
    prec = make_preconditioner(L, tree.perm)
    A = inst.matvec
    b = A(np.ones(inst.n))
    _, stats = pcg(A, prec, b, tol=1e-8)
    err = estimate_convergence_factor(A, prec, inst.n, seed=seed)
    row = BenchmarkRow(level, inst.n, inst.eta, inst.eps, setup / inst.n, mem, err,
                       stats.iterations, stats.time_per_step_per_n)
    reports = []
    if oracle:
        from .oracle import oracle_check_suite
        ref = _dense_reference(kind, tree, inst)
        ctl = None if kind == "fem" else TruncationControl(inst.eps * 1e-2)
        reports = oracle_check_suite(G, ref, ctl, seed=seed)
        Ld = L.densify()
        rel = np.linalg.norm(Ld @ Ld.T - ref, 2) / np.linalg.norm(ref, 2)
        from .oracle import OracleReport
        reports.append(OracleReport("Cholesky reconstruction (relative)", rel, 10 * inst.eps,
                                    rel <= 10 * inst.eps))
        for r in reports:
            log(f"  level {level}: {r.line()}")
    return row, stats.converged, reports


def run_benchmark(kind: str, levels, eta: Optional[float] = None, eps: Optional[float] = None,
                  leaf_size: int = 32, seed: int = 42, oracle: bool = False, log=_log):
    """Run every level; returns ``(rows, status)`` with status one of the exit codes."""
    rows, status = [], EXIT_OK
    for level in levels:
        try:
            row, ok, reports = run_level(kind, level, eta, eps, leaf_size, seed, oracle, log)
        except (MemoryError, FactorizationBreakdown, ValueError) as exc:
            log(f"level {level}: {type(exc).__name__}: {exc}")
            status = EXIT_STRUCT
            continue
        log(f"level {level}: n={row.n} setup/n={row.setup_time_per_n:.2e}s "
            f"mem/n={row.mem_per_n_kb:.2f}KB Err={row.err:.3f} m={row.m}")
        rows.append(row)
        if any(not r.passed for r in reports):
            status = EXIT_STRUCT
        elif not ok and status == EXIT_OK:
            status = EXIT_NOCONV
    return rows, status


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def verify(kind: str = "fem", level: int = 4, eps: float = 1e-6, leaf_size: int = 16,
           inject: Optional[str] = None, seed: int = 0, log=print) -> list:
    """Dense-oracle checks on a small instance; returns the reports."""
    from .oracle import OracleReport, mutate, oracle_check_suite, oracle_densify, untouched_blocks

    G, tree, bt, inst = make_instance(kind, level, leaf_size=leaf_size)
    ref = _dense_reference(kind, tree, inst)
    build_ctl = None if kind == "fem" else TruncationControl(inst.eps * 1e-2)
    if inject:
        G = mutate(G, inject, seed)
    reports = [r for r in oracle_check_suite(G, ref, build_ctl, seed=seed)]
    for r in reports:
        log(r.line())
    if not all(r.passed for r in reports):
        return reports
    ctl = TruncationControl(eps)
    A = oracle_densify(G)
    nA = np.linalg.norm(A, 2)
    rng = np.random.default_rng(seed)

    def add(name, err, bound):
        r = OracleReport(name, float(err), float(bound), bool(err <= bound))
        reports.append(r)
        log(r.line())

    def structure(name, H):
        bad = [r for r in oracle_check_suite(H, oracle_densify(H), None, seed=seed)[:4]
               if not r.passed]
        add(f"{name}: structural invariants", float(len(bad)), 0.0)

    # global and local low-rank updates
    k = 2
    X, Y = rng.standard_normal((inst.n, k)), rng.standard_normal((inst.n, k))
    scale = nA + np.linalg.norm(X, 2) * np.linalg.norm(Y, 2)
    Z = add_lowrank_global(G, LowRankFactor(X, Y), ctl)
    add("global low-rank update", np.linalg.norm(oracle_densify(Z) - A - X @ Y.T, 2), 50 * eps * scale)
    structure("global update", Z)
    t0 = tree.sons[0][0] if tree.sons[0] else 0
    s0 = tree.sons[0][-1] if tree.sons[0] else 0
    Xl = rng.standard_normal((tree.card(t0), k))
    Yl = rng.standard_normal((tree.card(s0), k))
    Z = G.copy()
    keep = {key: (Z.coupling.get(key), Z.near.get(key)) for key in untouched_blocks(bt, t0, s0)}
    keep = {key: tuple(None if v is None else v.copy() for v in val) for key, val in keep.items()}
    add_lowrank_local(Z, t0, s0, LowRankFactor(Xl, Yl), ctl)
    ref_l = A.copy()
    ref_l[tree.start[t0]:tree.stop[t0], tree.start[s0]:tree.stop[s0]] += Xl @ Yl.T
    add("local low-rank update", np.linalg.norm(oracle_densify(Z) - ref_l, 2),
        50 * eps * (nA + np.linalg.norm(Xl, 2) * np.linalg.norm(Yl, 2)))
    changed = sum(1 for key, (S, N) in keep.items()
                  if (S is not None and not np.array_equal(S, Z.coupling.get(key)))
                  or (N is not None and not np.array_equal(N, Z.near.get(key))))
    add("local update: untouched blocks bit-identical", float(changed), 0.0)
    structure("local update", Z)

    # multiplication
    Z = G.copy()
    multiply_add(Z, 0, 0, 1.0, G, 0, 0, G, 0, 0, ctl)
    add("multiply_add", np.linalg.norm(oracle_densify(Z) - A - A @ A, 2), 100 * eps * (nA + nA * nA))
    structure("multiply_add", Z)

    # Cholesky and inversion
    L = cholesky_factorize(G, ctl)
    Ld = L.densify()
    add("Cholesky reconstruction (relative)",
        np.linalg.norm(Ld @ Ld.T - A, 2) / nA, 10 * eps)
    add("Cholesky factor upper triangle", np.abs(np.triu(Ld, 1)).max(initial=0.0), 0.0)
    structure("Cholesky factor", L.M)
    C = invert(G, ctl)
    cond = np.linalg.cond(A)
    add("inverse: ||CA - I||_2", np.linalg.norm(densify(C) @ A - np.eye(inst.n), 2),
        max(1e-5, 100 * eps * cond))
    return reports


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _levels(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part or "-" in part[1:]:
            a, b = part.replace("..", "-").split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="h2arith", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd")

    def common(q, level_flag="--levels"):
        q.add_argument("--kind", choices=("fem", "bem"), default="fem")
        if level_flag == "--levels":
            q.add_argument("--levels", type=_levels, default=None,
                           help="levels, e.g. 7 or 6..8 or 6,7 (default: 7 fem, 11 bem)")
        else:
            q.add_argument("--level", type=int, default=None)
        q.add_argument("--eta", type=float, default=None, help="admissibility parameter")
        q.add_argument("--eps", type=float, default=None, help="truncation accuracy")
        q.add_argument("--leaf-size", type=int, default=32)
        q.add_argument("--seed", type=int, default=42)

    b = sub.add_parser("bench", help="reproduce the preconditioner tables")
    common(b)
    b.add_argument("--out", choices=("csv", "json"), default="csv")
    b.add_argument("--output", default=None, help="write rows to this file instead of stdout")
    b.add_argument("--oracle", action="store_true", help="enable dense oracle checks")

    v = sub.add_parser("verify", help="dense-oracle checks on a small instance")
    common(v, "--level")
    v.add_argument("--inject-fault", choices=("coupling", "transfer", "near"), default=None,
                   help="corrupt the matrix first (mutation test)")

    f = sub.add_parser("factorize", help="compute and store a Cholesky factor")
    common(f, "--level")
    f.add_argument("--save", required=True, help="output .npz file")

    s = sub.add_parser("solve", help="preconditioned CG on a model problem")
    common(s, "--level")
    s.add_argument("--factor", default=None, help="Cholesky factor stored by 'factorize'")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--maxit", type=int, default=500)
    return p


def _default_level(kind):
    return 7 if kind == "fem" else 11


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in SUBCOMMANDS + ("-h", "--help"):
        argv = ["bench"] + argv
    args = _parser().parse_args(argv)

    if args.cmd == "bench":
        levels = args.levels or [_default_level(args.kind)]
        rows, status = run_benchmark(args.kind, levels, args.eta, args.eps, args.leaf_size,
                                     args.seed, args.oracle)
        text = emit_rows(rows, args.out)
        if args.output:
            with open(args.output, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return status

    if args.cmd == "verify":
        level = args.level or 4
        eps = args.eps if args.eps is not None else 1e-6
        try:
            reports = verify(args.kind, level, eps, min(args.leaf_size, 16), args.inject_fault,
                             args.seed)
        except (MemoryError, FactorizationBreakdown, ValueError) as exc:
            print(f"error: {exc}")
            return EXIT_STRUCT
        failed = sum(not r.passed for r in reports)
        print(f"{len(reports) - failed}/{len(reports)} checks passed")
        return EXIT_OK if failed == 0 else EXIT_STRUCT

    level = args.level or _default_level(args.kind)
    try:
        G, tree, bt, inst = make_instance(args.kind, level, eta=args.eta,
                                          leaf_size=args.leaf_size, eps=args.eps)
        if args.cmd == "factorize":
            t0 = time.perf_counter()
            L = cholesky_factorize(G, _ctl(inst.eps))
            dt = time.perf_counter() - t0
            save_h2(L.M, args.save)
            rep = storage_report(L.M)
            print(f"n={inst.n} eps={inst.eps:.2e} time={dt:.2f}s mem/n={rep.kb_per_row:.3f}KB "
                  f"-> {args.save}")
            return EXIT_OK
        if args.factor:
            M = load_h2(args.factor)
            if M.shape != G.shape:
                raise ValueError("stored factor does not match the problem size")
            L = TriangularH2(M, lower=True)
            perm = M.bt.rows.perm
        else:
            L = cholesky_factorize(G, _ctl(inst.eps))
            perm = tree.perm
        A = inst.matvec
        b = A(np.ones(inst.n))
        x, st = pcg(A, make_preconditioner(L, perm), b, args.tol, args.maxit)
        print(f"n={inst.n} iterations={st.iterations} residual={st.residual:.2e} "
              f"error={np.abs(x - 1).max():.2e}")
        return EXIT_OK if st.converged else EXIT_NOCONV
    except (MemoryError, FactorizationBreakdown, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STRUCT


if __name__ == "__main__":
    sys.exit(main())
