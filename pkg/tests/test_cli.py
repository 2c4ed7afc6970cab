import csv
import io
import subprocess
import sys

import pytest

from chunkstasks.cli import HEADER, main


def run_cli(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr().out
    return code, list(csv.DictReader(io.StringIO(out))), out


def test_fib_row(capsys):
    code, rows, out = run_cli(capsys, "bench", "fib", "--n", "20", "--workers", "4")
    assert code == 0
    assert out.splitlines()[0] == ",".join(HEADER)
    (row,) = rows
    assert row["result_or_err"] == "6765"
    assert int(row["tasks"]) > 0 and float(row["wall_s"]) > 0


def test_fib_single_worker_no_steals(capsys):
    _, (row,), _ = run_cli(capsys, "bench", "fib", "--n", "15", "--workers", "1")
    assert row["steals"] == "0"
    assert row["result_or_err"] == "610"


def test_negative_n_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "fib", "--n", "-1"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_matmul_verify(capsys):
    code, (row,), _ = run_cli(
        capsys, "bench", "matmul", "--n", "512", "--block", "128", "--fill", "0.5", "--workers", "2", "--seed", "3", "--verify"
    )
    assert code == 0
    err = float(row["result_or_err"].split("relerr=")[1])
    assert err <= 1e-12


def test_verify_refused_for_large_n(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "matmul", "--n", "2048", "--block", "256", "--verify"])
    assert exc.value.code == 2


def test_bad_grid_refused(capsys):
    with pytest.raises(SystemExit):
        main(["bench", "matmul", "--n", "384", "--block", "128"])


def test_zero_fill_has_almost_no_tasks(capsys):
    _, (row,), _ = run_cli(capsys, "bench", "matmul", "--n", "512", "--block", "64", "--fill", "0")
    assert int(row["tasks"]) <= 1


def test_scaling_rows(capsys):
    code, rows, _ = run_cli(capsys, "bench", "scaling", "--n", "256", "--block", "64", "--workers-list", "1,2,4", "--seed", "5")
    assert code == 0
    assert [r["workers"] for r in rows] == ["1", "2", "4"]
    assert len({r["result_or_err"] for r in rows}) == 1
    assert rows[0]["efficiency"] == "1.000"


def test_fill_sweep_wall_time_shape(capsys):
    walls = {}
    for fill in ("1.0", "0.5", "0.1"):
        best = None
        for _ in range(3):
            _, (row,), _ = run_cli(capsys, "bench", "matmul", "--n", "1024", "--block", "128", "--fill", fill, "--workers", "2")
            best = min(best or float("inf"), float(row["wall_s"]))
        walls[fill] = best
    assert walls["1.0"] >= walls["0.5"] >= walls["0.1"]


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "chunkstasks", "bench", "fib", "--n", "10", "--workers", "2"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[1].endswith(",55")
