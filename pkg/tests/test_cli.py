import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from mbqp.cli import main, p_family, parse_windows, CliError
from mbqp.condense import build_generalized_qp, kkt_pattern, make_transform
from mbqp.generators import random_problem
from mbqp.model import MpcProblem, save_problem
from mbqp.sparse_qp import assemble_sparse_qp


@pytest.fixture
def problem_file(rng, tmp_path):
    prob = random_problem(rng, 6, 10, 5, n_bounded=12)
    path = tmp_path / "prob.json"
    save_problem(prob, path)
    return prob, path


def run(argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_writes_converged_json(problem_file, tmp_path):
    prob, path = problem_file
    out = tmp_path / "sol.json"
    assert run(["solve", "--problem", path, "--out", out]) == 0
    doc = json.loads(out.read_text())
    assert doc["status"] == "converged"
    assert np.asarray(doc["u"]).size == 30
    assert np.asarray(doc["x"]).shape == (6, 10)
    assert set(doc["report"]) >= {"iterations", "prep_flops", "solve_flops", "nnz_kkt", "factor_fill"}


def test_solve_transforms_agree(problem_file, tmp_path):
    _, path = problem_file
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["solve", "--problem", path, "--pc", "1x6", "--out", a]) == 0
    assert run(["solve", "--problem", path, "--pc", "2,2,2", "--out", b]) == 0
    ua = np.asarray(json.loads(a.read_text())["u"])
    ub = np.asarray(json.loads(b.read_text())["u"])
    np.testing.assert_allclose(ua, ub, atol=1e-6)


def test_solve_crossed_bounds_names_stage(problem_file, tmp_path, capsys):
    prob, _ = problem_file
    lo = list(prob.u_lower)
    lo[4] = np.full(5, 2.0)
    hi = list(prob.u_upper)
    hi[4] = np.full(5, 1.0)
    bad = tmp_path / "bad.json"
    save_problem(MpcProblem(prob.model, prob.costs, lo, hi, prob.x0), bad)
    assert run(["solve", "--problem", bad, "--out", tmp_path / "o.json"]) != 0
    assert "stage 4" in capsys.readouterr().err


def test_bad_inputs_reported_with_context(problem_file, tmp_path, capsys):
    _, path = problem_file
    assert run(["solve", "--problem", path, "--pc", "1,2,q"]) == 2
    assert "entry 3" in capsys.readouterr().err
    assert run(["solve", "--problem", path, "--mb", "2,2"]) == 2
    assert "sums to 4" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text("{\n\"model\": [1,\n")
    assert run(["solve", "--problem", broken]) == 2
    assert "line" in capsys.readouterr().err
    assert run(["solve", "--problem", tmp_path / "missing.json"]) == 2


def test_pattern_lines_and_reduction(problem_file, tmp_path):
    _, path = problem_file
    full, red, again = tmp_path / "f.txt", tmp_path / "r.txt", tmp_path / "r2.txt"
    assert run(["pattern", "--problem", path, "--out", full]) == 0
    assert run(["pattern", "--problem", path, "--mb", "1,2,3", "--pc", "1,2,3", "--out", red]) == 0
    assert run(["pattern", "--problem", path, "--mb", "1,2,3", "--pc", "1,2,3", "--out", again]) == 0
    n_full = len(full.read_text().splitlines())
    n_red = len(red.read_text().splitlines())
    assert n_red < n_full / 2
    assert red.read_bytes() == again.read_bytes()


def test_scalar_pattern_file(tmp_path):
    from mbqp.model import LtvModel, StageCosts

    prob = MpcProblem(
        LtvModel([np.array([[0.5]])], [np.array([[1.0]])], [np.zeros(1)]),
        StageCosts.uniform(np.eye(1), np.eye(1), 1),
        [np.array([-1.0])],
        [np.array([1.0])],
        np.array([1.0]),
    )
    save_problem(prob, tmp_path / "s.json")
    assert run(["pattern", "--problem", tmp_path / "s.json", "--out", tmp_path / "s.txt"]) == 0
    lines = (tmp_path / "s.txt").read_text().splitlines()
    assert sorted(lines) == sorted(["0 0", "0 2", "1 1", "1 2", "2 0", "2 1"])


def test_sweep_rows_and_equivalence(tmp_path, rng):
    prob = random_problem(rng, 12, 3, 2, n_bounded=8)
    path = tmp_path / "p12.json"
    save_problem(prob, path)
    out = tmp_path / "sweep.csv"
    assert run(["sweep", "--problem", path, "--pc", "family", "--tol", "1e-10", "--out", out]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["N_x", "prep_flops", "solve_flops", "total_flops", "nnz_kkt", "factor_fill", "iterations", "objective"]
    nx = [int(r["N_x"]) for r in rows]
    assert nx == sorted(nx, reverse=True) and nx[0] == 12 and nx[-1] == 0
    objs = np.array([float(r["objective"]) for r in rows])
    assert np.abs(objs - np.median(objs)).max() <= 1e-6 * (1 + abs(np.median(objs)))
    prep = [int(r["prep_flops"]) for r in rows]
    assert prep[0] == min(prep)
    for r in rows:
        assert int(r["total_flops"]) == int(r["prep_flops"]) + int(r["solve_flops"])


def test_single_row_sweep_nnz_matches_pattern(problem_file, tmp_path):
    prob, path = problem_file
    out = tmp_path / "one.csv"
    assert run(["sweep", "--problem", path, "--pc", "1x6", "--out", out]) == 0
    rows = read_csv(out)
    qp = assemble_sparse_qp(prob)
    assert len(rows) == 1
    assert int(rows[0]["nnz_kkt"]) == kkt_pattern(build_generalized_qp(qp, make_transform(qp)))[1]


def test_sweep_output_deterministic_across_jobs(problem_file, tmp_path):
    _, path = problem_file
    outs = [tmp_path / f"s{k}.csv" for k in range(3)]
    assert run(["sweep", "--problem", path, "--out", outs[0]]) == 0
    assert run(["sweep", "--problem", path, "--out", outs[1]]) == 0
    assert run(["sweep", "--problem", path, "--jobs", "3", "--out", outs[2]]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes() == outs[2].read_bytes()


def test_simulation_at_origin_stays_there(rng, tmp_path):
    prob = random_problem(rng, 5, 2, 1, linear_terms=False, affine=False).with_x0(np.zeros(2))
    save_problem(prob, tmp_path / "z.json")
    out = tmp_path / "z.csv"
    assert run(["simulate", "--problem", tmp_path / "z.json", "--steps", "5", "--amp", "0", "--out", out]) == 0
    rows = read_csv(out)
    assert len(rows) == 5
    for r in rows:
        # zero up to the interior-point tolerance
        assert max(abs(float(r["x0"])), abs(float(r["x1"])), abs(float(r["u0"]))) <= 1e-8
        assert r["failed"] == "0"


def test_simulation_repeatable(problem_file, tmp_path):
    _, path = problem_file
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--problem", path, "--steps", "8", "--seed", "11"]
    assert run(args + ["--out", a]) == 0
    assert run(args + ["--out", b]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    assert run(["simulate", "--problem", path, "--steps", "8", "--seed", "12", "--out", c]) == 0
    assert c.read_bytes() != a.read_bytes()


def test_benchmark_closed_loop_bounded(tmp_path):
    out = tmp_path / "osc.csv"
    blocks = "1x10,10x23"
    argv = ["simulate", "--benchmark", "oscillating-masses", "--mb", blocks, "--pc", blocks, "--steps", "100", "--out", out]
    assert run(argv) == 0
    rows = read_csv(out)
    assert len(rows) == 100
    u = np.array([[float(r[f"u{j}"]) for j in range(4)] for r in rows])
    x = np.array([[float(r[f"x{i}"]) for i in range(6)] for r in rows])
    assert np.abs(u).max() <= 0.5 + 1e-8
    assert np.abs(x).max() < 5.0
    assert all(r["failed"] == "0" for r in rows)


def test_p_family_for_benchmark():
    fam = p_family(240, [10] * 24)
    lengths = [len(p) for p in fam]
    assert lengths == [0, 1, 2, 3, 4, 5, 6, 8, 12, 15, 16, 20, 24, 30, 40, 48, 60, 80, 120, 240]
    assert all(sum(p) == 240 for p in fam if p)
    assert fam[13] == [5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5] + [10] * 18
    assert fam[17][:3] == [3, 2, 3]
    assert fam[-1] == [1] * 240


def test_window_parsing():
    assert parse_windows("1,2x3", "--mb") == [1, 2, 2, 2]
    assert parse_windows("empty", "--pc") == []
    with pytest.raises(CliError):
        parse_windows("3,a", "--pc")


def test_module_entry_point(problem_file, tmp_path):
    _, path = problem_file
    res = subprocess.run(
        [sys.executable, "-m", "mbqp", "pattern", "--problem", str(path), "--pc", "empty"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert res.stdout.splitlines()[0].count(" ") == 1
