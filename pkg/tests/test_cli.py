import subprocess
import sys

import pytest

from bemcap.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, build_parser, run_command
from bemcap.io import CSV_COLUMNS, read_history, read_vtk_cell_scalars, save_off
from bemcap.mesh import fichera


def test_small_run_writes_csv_and_vtk(tmp_path):
    csv_path = tmp_path / "h.csv"
    vtk = tmp_path / "vtk"
    code = run_command(["--max-elements", "40", "--csv", str(csv_path), "--vtk-dir", str(vtk),
                        "--reference", "0.66067815409957", "--cond"])
    assert code == EXIT_OK
    rows = read_history(csv_path)
    assert rows[0]["number_of_elements"] == 12
    assert rows[-1]["number_of_elements"] > 40
    assert all(r["cond"] is not None and r["capacity_error"] is not None for r in rows)
    for r in rows:
        n, _ = read_vtk_cell_scalars(vtk / f"mesh_{r['level']}.vtk")
        assert n == r["number_of_elements"]


def test_stdout_csv(capsys):
    assert run_command(["--geometry", "star", "--max-elements", "30", "--reference", "none"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert tuple(out[0].split(",")) == CSV_COLUMNS
    assert len(out) >= 3


def test_off_geometry(tmp_path):
    off = tmp_path / "f.off"
    save_off(fichera(), off)
    assert run_command(["--geometry", f"off:{off}", "--max-elements", "50", "--csv",
                        str(tmp_path / "f.csv")]) == EXIT_OK


@pytest.mark.parametrize("argv", [["--theta", "0"], ["--theta", "1.2"], ["--max-elements", "4"],
                                  ["--estimator", "foo"], ["--geometry", "sphere"],
                                  ["--lambda", "-1"], ["--order", "0"], ["--reference", "abc"],
                                  ["--star-points", "2", "--geometry", "star"], ["--bogus"]])
def test_config_errors_exit_1(argv, capsys):
    assert run_command(argv) == EXIT_CONFIG
    assert "bemcap: error:" in capsys.readouterr().err


def test_missing_off_names_path(tmp_path, capsys):
    missing = tmp_path / "absent.off"
    assert run_command(["--geometry", f"off:{missing}"]) == EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_bad_off_names_line(tmp_path, capsys):
    bad = tmp_path / "quad.off"
    bad.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    assert run_command(["--geometry", f"off:{bad}"]) == EXIT_CONFIG
    assert f"{bad}:7" in capsys.readouterr().err


def test_numerical_failure_exit_2(tmp_path, monkeypatch):
    import bemcap.driver as drv
    from bemcap.solver import ConvergenceError

    real = drv.solve_capacity
    calls = {"n": 0}

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] > 1:
            raise ConvergenceError("forced")
        return real(*a, **kw)

    monkeypatch.setattr(drv, "solve_capacity", flaky)
    path = tmp_path / "partial.csv"
    assert run_command(["--max-elements", "100", "--csv", str(path)]) == EXIT_NUMERIC
    assert len(read_history(path)) == 1


def test_parser_defaults():
    a = build_parser().parse_args([])
    assert (a.geometry, a.theta, a.estimator, a.precond, a.lam, a.max_elements, a.order) == \
        ("cube", 0.5, "zz", "operator", 1e-3, 1000, 4)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "bemcap", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--theta" in out.stdout
