"""Reproduce the FEM and BEM preconditioner tables at desk scale.

Run ``python3 demos/fem_bem_tables.py [max_fem_level] [max_bem_level]``.
Each row is an approximate Cholesky factorization used as a CG preconditioner.
"""
import sys

from h2arith.cli import emit_rows, run_benchmark


def main(max_fem=8, max_bem=11):
    for kind, levels in (("fem", range(6, max_fem + 1)), ("bem", range(8, max_bem + 1))):
        print(f"# {kind.upper()}")
        rows, status = run_benchmark(kind, list(levels), log=lambda msg: None)
        print(emit_rows(rows), end="")
        for r in rows:
            print(f"#  level {r.level:2d}: n={r.n:6d}  mem/n={r.mem_per_n_kb:5.2f} KB  "
                  f"setup/n={r.setup_time_per_n:.2e} s  Err={r.err:.3f}  m={r.m}")
        if status:
            print(f"# exit status {status}")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
