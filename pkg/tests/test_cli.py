import numpy as np
import pytest

from h2arith.cli import BenchmarkRow, _levels, emit_rows, main, parse_rows, run_level, verify

ROWS = [BenchmarkRow(6, 3969, 4.0, 1.2e-2, 3.1e-5, 1.25, 0.07, 3, 2.2e-7),
        BenchmarkRow(7, 16129, 4.0, 3.1e-3, 3.3e-5, 1.5, 0.06, 3, 2.5e-7)]


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_rows_round_trip(fmt):
    assert parse_rows(emit_rows(ROWS, fmt), fmt) == ROWS


def test_csv_header():
    head = emit_rows(ROWS).splitlines()[0].split(",")
    assert head == ["level", "n", "eta", "eps", "setup_time_per_n", "mem_per_n_kb", "err", "m",
                    "solve_time_per_n"]


def test_level_ranges():
    assert _levels("6..8") == [6, 7, 8]
    assert _levels("6,8") == [6, 8]
    assert _levels("7") == [7]


def test_run_level_small_fem():
    row, ok, reports = run_level("fem", 5, leaf_size=16, oracle=True, log=lambda m: None)
    assert ok and row.n == 961 and row.m <= 5 and row.err < 0.5
    assert reports and all(r.passed for r in reports)


def test_verify_passes_on_fem():
    reports = verify("fem", 4, log=lambda m: None)
    assert all(r.passed for r in reports), [r.line() for r in reports if not r.passed]
    names = {r.name for r in reports}
    assert "local update: untouched blocks bit-identical" in names


def test_verify_exit_codes(capsys):
    assert main(["verify", "--kind", "fem", "--level", "4"]) == 0
    assert "checks passed" in capsys.readouterr().out
    assert main(["verify", "--kind", "fem", "--level", "4", "--inject-fault", "near"]) == 2
    assert main(["verify", "--kind", "fem", "--level", "4", "--inject-fault", "transfer"]) == 2


def test_verify_bem():
    assert main(["verify", "--kind", "bem", "--level", "5"]) == 0


def test_bench_writes_csv(tmp_path):
    out = tmp_path / "rows.csv"
    assert main(["--kind", "fem", "--levels", "4..5", "--leaf-size", "16",
                 "--output", str(out)]) == 0
    rows = parse_rows(out.read_text())
    assert [r.level for r in rows] == [4, 5]
    assert all(np.isfinite(r.err) and r.m >= 1 for r in rows)


def test_bench_json_stdout(capsys):
    assert main(["bench", "--kind", "bem", "--levels", "5", "--out", "json"]) == 0
    rows = parse_rows(capsys.readouterr().out, "json")
    assert rows[0].n == 128


def test_factorize_then_solve(tmp_path, capsys):
    path = str(tmp_path / "L.npz")
    assert main(["factorize", "--kind", "fem", "--level", "5", "--save", path]) == 0
    assert main(["solve", "--kind", "fem", "--level", "5", "--factor", path]) == 0
    out = capsys.readouterr().out
    assert "iterations=" in out
    assert main(["solve", "--kind", "fem", "--level", "4", "--factor", path]) == 2


def test_solve_without_convergence_exit_code():
    assert main(["solve", "--kind", "fem", "--level", "5", "--eps", "0.5", "--maxit", "1"]) == 1
