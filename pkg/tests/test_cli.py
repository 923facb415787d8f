import csv
import io
import socket
import subprocess
import sys

import pytest

from coordforge.cli import main, parse_compare_spec
from coordforge.metrics import CSV_COLUMNS, TIMING_COLUMNS

SMALL = ["--synthetic", "60x20", "--lambda", "0.01"]
NUMERIC = [c for c in CSV_COLUMNS if c not in TIMING_COLUMNS]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _run(tmp_path, *flags, name="out.csv"):
    out = tmp_path / name
    code = main(["run", *flags, "--metrics", str(out)])
    return code, (_rows(out) if out.exists() else None)


def test_reference_run_reaches_small_gap(tmp_path):
    code, rows = _run(tmp_path, "--synthetic", "200x50", "--form", "primal", "--engine", "seq",
                      "--lambda", "0.001", "--epochs", "500", "--seed", "7")
    assert code == 0
    assert float(rows[-1]["duality_gap"]) <= 1e-6
    assert len(rows) == 501


def test_zero_epochs_writes_single_row(tmp_path):
    code, rows = _run(tmp_path, *SMALL, "--epochs", "0")
    assert code == 0
    assert len(rows) == 1 and rows[0]["epoch"] == "0"


def test_header_and_rectangular_rows(tmp_path):
    code, _ = _run(tmp_path, *SMALL, "--epochs", "5", "--engine", "distributed", "--k", "2")
    assert code == 0
    with open(tmp_path / "out.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == CSV_COLUMNS
    assert all(len(r) == len(CSV_COLUMNS) for r in table)
    body = [dict(zip(table[0], r)) for r in table[1:]]
    assert body[0]["gamma"] == "" and float(body[1]["gamma"]) == 0.5
    elapsed = [float(r["elapsed_s"]) for r in body]
    assert elapsed == sorted(elapsed)


def test_non_distributed_gamma_blank(tmp_path):
    _, rows = _run(tmp_path, *SMALL, "--epochs", "3", "--engine", "atomic")
    assert all(r["gamma"] == "" for r in rows)
    assert all(float(r["t_transfer_s"]) == 0 and float(r["t_comm_s"]) == 0 for r in rows)


@pytest.mark.parametrize("engine", ["seq", "atomic", "tpa", "distributed"])
def test_rerun_is_reproducible(tmp_path, engine):
    flags = [*SMALL, "--epochs", "6", "--engine", engine, "--seed", "3", "--workers", "1"]
    _, a = _run(tmp_path, *flags, name="a.csv")
    _, b = _run(tmp_path, *flags, name="b.csv")
    assert [[r[c] for c in NUMERIC] for r in a] == [[r[c] for c in NUMERIC] for r in b]


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("COORD_FORGE_SEED", "11")
    _, env_rows = _run(tmp_path, *SMALL, "--epochs", "3", name="env.csv")
    monkeypatch.delenv("COORD_FORGE_SEED")
    _, flag_rows = _run(tmp_path, *SMALL, "--epochs", "3", "--seed", "11", name="flag.csv")
    _, zero_rows = _run(tmp_path, *SMALL, "--epochs", "3", name="zero.csv")
    gaps = lambda rows: [r["duality_gap"] for r in rows]
    assert gaps(env_rows) == gaps(flag_rows) != gaps(zero_rows)


def test_bad_seed_env_is_usage_error(monkeypatch, capsys):
    monkeypatch.setenv("COORD_FORGE_SEED", "abc")
    assert main(["run", *SMALL]) == 1


@pytest.mark.parametrize("flags", [
    ["--engine", "distributed", "--k", "2", "--transport", "tcp"],
    ["--lambda", "0"],
    ["--lambda", "-1"],
    ["--epochs", "-2"],
    ["--engine", "tpa", "--lanes", "3"],
    ["--engine", "distributed", "--k", "0"],
    ["--engine", "gpu"],
    ["--gap-check-every", "0"],
    ["--synthetic", "3y4"],
])
def test_invalid_specs_exit_1(flags, capsys):
    argv = ["run", "--synthetic", "20x5", *flags] if "--synthetic" not in flags else ["run", *flags]
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_source_exit_1(capsys):
    assert main(["run", "--epochs", "1"]) == 1


def test_unreadable_data_exit_2(tmp_path, capsys):
    assert main(["run", "--data", str(tmp_path / "nope.svm")]) == 2
    bad = tmp_path / "bad.svm"
    bad.write_text("1 1:1\n1 0:3\n")
    assert main(["run", "--data", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_data_file_run(tmp_path):
    data = tmp_path / "d.svm"
    data.write_text("1 1:1 2:0.5\n-1 2:1\n0.5 1:2\n")
    code, rows = _run(tmp_path, "--data", str(data), "--epochs", "50", "--precision", "64",
                      "--lambda", "0.1")
    assert code == 0 and float(rows[-1]["duality_gap"]) <= 1e-10


def test_transport_failure_exit_3(capsys):
    argv = ["run", *SMALL, "--engine", "distributed", "--k", "2", "--transport", "tcp",
            "--listen", "127.0.0.1:0", "--timeout", "0.3", "--epochs", "2"]
    assert main(argv) == 3
    assert "transport failure" in capsys.readouterr().err


def test_tcp_with_spawned_workers_matches_inproc(tmp_path):
    base = [*SMALL, "--epochs", "5", "--engine", "distributed", "--k", "2",
            "--aggregation", "adaptive", "--seed", "4"]
    _, inproc = _run(tmp_path, *base, name="inproc.csv")
    _, tcp = _run(tmp_path, *base, "--transport", "tcp", "--listen", "127.0.0.1:0",
                  "--spawn-workers", name="tcp.csv")
    assert [[r[c] for c in NUMERIC] for r in inproc] == [[r[c] for c in NUMERIC] for r in tcp]


def test_compare_long_format(tmp_path):
    out = tmp_path / "cmp.csv"
    code = main(["compare",
                 "seq: --synthetic 60x20 --epochs 4 --engine seq --seed 2",
                 "one: --synthetic 60x20 --epochs 4 --engine atomic --workers 1 --seed 2",
                 "--synthetic 60x20 --epochs 4 --engine distributed --k 2 --seed 2",
                 "--metrics", str(out)])
    assert code == 0
    rows = _rows(out)
    assert list(rows[0]) == ["label", *CSV_COLUMNS]
    assert {r["label"] for r in rows} == {"seq", "one", "run3"}
    seq = [r["duality_gap"] for r in rows if r["label"] == "seq"]
    one = [r["duality_gap"] for r in rows if r["label"] == "one"]
    assert seq == one


def test_compare_rejects_duplicate_labels(capsys):
    assert main(["compare", "a: --synthetic 5x2 --epochs 1", "a: --synthetic 5x2 --epochs 1"]) == 1


def test_parse_compare_spec():
    assert parse_compare_spec("x: --epochs 3", 1) == ("x", ["--epochs", "3"])
    assert parse_compare_spec("--epochs 3", 2) == ("run2", ["--epochs", "3"])


def test_stdout_when_no_metrics_path(capsys):
    assert main(["run", *SMALL, "--epochs", "2"]) == 0
    captured = capsys.readouterr()
    rows = list(csv.reader(io.StringIO(captured.out)))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 4
    assert "gap=" in captured.err


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_separate_worker_processes(tmp_path):
    port = _free_port()
    common = ["--synthetic", "80x30", "--epochs", "6", "--k", "2", "--seed", "5",
              "--aggregation", "adaptive", "--timeout", "60"]
    exe = [sys.executable, "-m", "coordforge.cli"]
    master = subprocess.Popen([*exe, "run", *common, "--engine", "distributed",
                               "--transport", "tcp", "--listen", f"127.0.0.1:{port}",
                               "--metrics", str(tmp_path / "tcp.csv")],
                              stderr=subprocess.PIPE, text=True)
    workers = [subprocess.Popen([*exe, "worker", *common, "--connect", f"127.0.0.1:{port}",
                                 "--worker-id", str(w)]) for w in range(2)]
    assert master.wait(120) == 0, master.stderr.read()
    assert all(w.wait(60) == 0 for w in workers)
    _, inproc = _run(tmp_path, *common, "--engine", "distributed", name="inproc.csv")
    tcp = _rows(tmp_path / "tcp.csv")
    assert [[r[c] for c in NUMERIC] for r in inproc] == [[r[c] for c in NUMERIC] for r in tcp]


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "coordforge.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "run" in out.stdout
