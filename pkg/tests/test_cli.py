import csv
import json
import subprocess
import sys

import pytest

from reflpose.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_then_solve_pair(tmp_path, capsys):
    out = tmp_path / "pair.json"
    assert run("--seed", 1, "synth", "--n-normal", 4, "--n-pixel", 4, "--n-reflection", 1, "-o", out) == 0
    assert (tmp_path / "pair.truth.json").exists()
    sol = tmp_path / "sol.json"
    assert run("solve-pair", out, "--truth", tmp_path / "pair.truth.json", "-o", sol, "-q") == 0
    doc = json.loads(sol.read_text())
    assert doc["rotation_error_deg"] < 0.1
    assert doc["converged"]


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("synth", "--seed", 5, "-o", a, "-q") == 0
    assert run("synth", "--seed", 5, "-o", b, "-q") == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()


def test_ransac(tmp_path):
    out = tmp_path / "p.json"
    run("synth", "--seed", 2, "--outliers", 0.3, "-o", out, "-q")
    sol = tmp_path / "s.json"
    assert run("ransac", out, "--truth", tmp_path / "p.truth.json", "-o", sol, "-q") == 0
    doc = json.loads(sol.read_text())
    assert doc["rotation_error_deg"] < 1.0
    assert set(doc["inlier_counts"]) == {"pixels", "normals", "reflections"}


def test_fig6_csv(tmp_path):
    out = tmp_path / "f.csv"
    assert run("fig6", "--mode", "g21", "--counts", "4,5", "--trials", 2, "-o", out, "-q") == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["count", "trials", "converged", "failures", "failure_rate"]
    assert [r[0] for r in rows[1:]] == ["4", "5"]


def test_fig6_stdout(capsys):
    assert run("fig6", "--counts", "4", "--trials", 1, "-q") == 0
    assert capsys.readouterr().out.startswith("count,trials,converged,failures,failure_rate\n")


def test_integrate(tmp_path):
    d = tmp_path / "views"
    assert run("synth", "--views", 3, "--n-pixel", 6, "--n-normal", 6, "--n-reflection", 2,
               "-o", d, "-q") == 0
    out = tmp_path / "graph.json"
    assert run("integrate", d, "-o", out, "-q") == 0
    doc = json.loads(out.read_text())
    assert doc["n_views"] == 3 and doc["converged"]


def test_integrate_uses_solution_files(tmp_path):
    d = tmp_path / "views"
    run("synth", "--views", 3, "--n-pixel", 6, "--n-normal", 6, "--n-reflection", 2, "-o", d, "-q")
    for f in sorted(d.glob("pair_*_*.json")):
        if f.name.count(".") == 1:
            run("solve-pair", f, "-o", d / (f.stem + ".solution.json"), "-q")
    assert run("integrate", d, "-q", "-o", tmp_path / "g.json") == 0


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["fig6", "--counts", "a,b"],
    ["fig6", "--mode", "blue"],
    [],
])
def test_argument_errors(argv, capsys):
    assert run(*argv) == 2
    assert "usage" in capsys.readouterr().err


def test_malformed_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("solve-pair", bad, "-q") == 2


def test_missing_file(tmp_path):
    assert run("solve-pair", tmp_path / "missing.json", "-q") == 2
    assert run("integrate", tmp_path / "nodir", "-q") == 2


def test_solver_failure_exit(tmp_path):
    p = tmp_path / "few.json"
    run("synth", "--n-pixel", 3, "--n-normal", 3, "--n-reflection", 0, "-o", p, "-q")
    assert run("solve-pair", p, "-q") == 1


def test_help_exit_zero(capsys):
    assert run("--help") == 0
    assert "solve-pair" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "reflpose", "fig6", "--counts", "4", "--trials", "1", "-q"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0
    assert r.stdout.splitlines()[0] == "count,trials,converged,failures,failure_rate"
