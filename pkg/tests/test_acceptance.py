"""Acceptance checks; each prints one PASS/FAIL line with its measured margins."""

import itertools
import time

import numpy as np
import pytest

from mbqp.cli import SweepConfig, benchmark_problem, main, p_family, run_sweep
from mbqp.condense import build_generalized_qp, expand_solution, make_transform
from mbqp.generators import random_problem, random_windows
from mbqp.solver import SolverSettings, solve_box_qp, solve_box_qp_bruteforce
from mbqp.sparse_qp import assemble_sparse_qp, dynamics_residual

TIGHT = SolverSettings(kkt_tol=1e-10, comp_tol=1e-10)


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return emit


def solve_expanded(qp, m, p, settings=TIGHT):
    tm = make_transform(qp, m, p)
    g = build_generalized_qp(qp, tm)
    sol, rep = solve_box_qp(g, settings)
    u, x = expand_solution((sol.u, sol.x), tm)
    return sol, rep, u, x


def test_six_stage_structure(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    prob = random_problem(rng, 6, 10, 5)
    A, B, w = prob.model.A_seq, prob.model.B_seq, prob.model.w_seq
    tm = make_transform(assemble_sparse_qp(prob), [1, 2, 3], [1, 2, 3])
    I5, I10 = np.eye(5), np.eye(10)
    checks = []
    checks.append(set(tm.T.blocks) == {(0, 0), (1, 1), (2, 1), (3, 2), (4, 2), (5, 2)})
    checks.append(all(np.array_equal(v, I5) for v in tm.T.blocks.values()))
    checks.append(set(tm.E.blocks) == {(0, 0), (2, 1), (5, 2)})
    checks.append(set(tm.F.blocks) == {(1, 0), (3, 1), (4, 2)})
    m_expected = {(k, k): I10 for k in range(6)}
    m_expected.update({(1, 0): -A[1], (3, 2): -A[3], (4, 3): -A[4]})
    checks.append(set(tm.M.blocks) == set(m_expected))
    checks.append(all(np.array_equal(tm.M.blocks[k], v) for k, v in m_expected.items()))
    minv_expected = {(k, k): I10 for k in range(6)}
    minv_expected.update({(1, 0): A[1], (3, 2): A[3], (4, 3): A[4], (4, 2): A[4] @ A[3]})
    checks.append(set(tm.Minv.blocks) == set(minv_expected))
    checks.append(all(np.allclose(tm.Minv.blocks[k], v, rtol=1e-15, atol=1e-15) for k, v in minv_expected.items()))
    n_expected = {(1, 1): B[1], (3, 3): B[3], (4, 4): B[4], (4, 3): A[4] @ B[3]}
    checks.append(set(tm.Npred.blocks) == set(n_expected))
    checks.append(all(np.allclose(tm.Npred.blocks[k], v, rtol=1e-15, atol=1e-15) for k, v in n_expected.items()))
    b = np.zeros((6, 10))
    b[1], b[3], b[4] = w[1], w[3], A[4] @ w[3] + w[4]
    checks.append(np.allclose(tm.b.reshape(6, 10), b, rtol=1e-15, atol=1e-15))
    elapsed = time.perf_counter() - t0
    ok = all(checks) and elapsed < 1.0
    report(1, "six-stage transform block structure", ok, f"{sum(checks)}/{len(checks)} block checks, {elapsed:.3f} s")


def test_condensing_invariance(report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    m = [3, 3, 3, 3]
    worst_u = worst_obj = 0.0
    active = []
    for _ in range(50):
        qp = assemble_sparse_qp(random_problem(rng, 12, 4, 2))
        ps = [None, [], [6, 6], [2, 3, 3, 4], random_windows(rng, 12, 5)]
        runs = [solve_expanded(qp, m, p) for p in ps]
        assert all(r[0].status == "converged" for r in runs)
        u0 = runs[0][2]
        active.append(np.mean((u0 <= qp.u_lower + 1e-7) | (u0 >= qp.u_upper - 1e-7)))
        for (s1, _, u1, _), (s2, _, u2, _) in itertools.combinations(runs, 2):
            worst_u = max(worst_u, float(np.abs(u1 - u2).max()))
            worst_obj = max(worst_obj, abs(s1.objective - s2.objective) / (1 + abs(s1.objective)))
    elapsed = time.perf_counter() - t0
    ok = worst_u <= 1e-6 and worst_obj <= 1e-8 and elapsed < 30
    report(
        2,
        "condensing invariance",
        ok,
        f"max |du| {worst_u:.2e}, max rel dobj {worst_obj:.2e}, "
        f"{np.mean(active):.0%} of inputs at a bound, {elapsed:.1f} s",
    )


def test_identity_transform_noop(report):
    rng = np.random.default_rng(3)
    mismatches = []
    for k in range(20):
        qp = assemble_sparse_qp(random_problem(rng, int(rng.integers(1, 15)), 3, 2))
        g = build_generalized_qp(qp, make_transform(qp))
        for name in ("R", "S", "Q", "A", "B"):
            if not getattr(g, name).equal_blocks(getattr(qp, name)):
                mismatches.append((k, name))
        for name in ("r", "q", "w", "u_lower", "u_upper"):
            if not np.array_equal(getattr(g, name), getattr(qp, name)):
                mismatches.append((k, name))
        if g.c != qp.c:
            mismatches.append((k, "c"))
    report(3, "identity transform is bitwise no-op", not mismatches, f"20 instances, mismatches {mismatches}")


def test_oracle_equivalence(report):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst_u = worst_obj = 0.0
    max_bounds = 0
    for k in range(200):
        N = int(rng.integers(2, 9))
        nx, nu = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        prob = random_problem(rng, N, nx, nu, n_bounded=int(rng.integers(0, 8)), rank_deficient_q=k % 3 == 0)
        qp = assemble_sparse_qp(prob)
        m = None if k % 2 == 0 else random_windows(rng, N)
        p = [None, [], random_windows(rng, N)][k % 3]
        g = build_generalized_qp(qp, make_transform(qp, m, p))
        max_bounds = max(max_bounds, int(np.sum(g.u_lower > -1e20) + np.sum(g.u_upper < 1e20)))
        sol, _ = solve_box_qp(g, TIGHT)
        bf = solve_box_qp_bruteforce(g)
        assert sol.status == "converged"
        worst_u = max(worst_u, float(np.abs(sol.u - bf.u).max()))
        worst_obj = max(worst_obj, abs(sol.objective - bf.objective) / (1 + abs(bf.objective)))
    elapsed = time.perf_counter() - t0
    ok = worst_u <= 1e-6 and worst_obj <= 1e-8 and max_bounds <= 14 and elapsed < 60
    report(
        4,
        "interior point matches enumeration",
        ok,
        f"max |du| {worst_u:.2e}, max rel dobj {worst_obj:.2e}, at most {max_bounds} bounds, {elapsed:.1f} s",
    )


def test_blocking_restricts(report):
    rng = np.random.default_rng(5)
    worst = np.inf
    for _ in range(50):
        N = 10
        qp = assemble_sparse_qp(random_problem(rng, N, 3, 2, n_bounded=8))
        m = random_windows(rng, N, 4)
        while m == [1] * N:
            m = random_windows(rng, N, 4)
        free = solve_expanded(qp, None, None)[0].objective
        blocked = solve_expanded(qp, m, None)[0].objective
        worst = min(worst, blocked - free)
    report(5, "blocked optimum never below unblocked", worst >= -1e-9, f"min margin {worst:.3e}")


@pytest.mark.slow
def test_benchmark_sweep_shape(report):
    t0 = time.perf_counter()
    problem = benchmark_problem(0)
    cfg = SweepConfig(problem, [10] * 24, p_family(240, [10] * 24))
    rows = run_sweep(cfg)
    elapsed = time.perf_counter() - t0
    by_nx = {r.N_x: r for r in rows}
    dense = by_nx[0]
    best_total = min(rows, key=lambda r: r.total_flops)
    best_nnz = min(rows, key=lambda r: r.nnz_kkt)
    best_prep = min(rows, key=lambda r: r.prep_flops)
    checks = {
        "total minimum interior": 0 < best_total.N_x < 240,
        "nnz minimum interior": 0 < best_nnz.N_x < 240,
        "prep minimum at N_x=240": best_prep.N_x == 240,
        "nnz saving >= 10%": best_nnz.nnz_kkt <= 0.9 * dense.nnz_kkt,
        "dense/optimal >= 1.5": best_total.total_flops * 1.5 <= dense.total_flops,
        "under 10 min": elapsed < 600,
    }
    detail = (
        f"{len(rows)} rows; total min at N_x={best_total.N_x} ({best_total.total_flops:.3e} vs dense "
        f"{dense.total_flops:.3e}, ratio {dense.total_flops / best_total.total_flops:.2f}); nnz min at "
        f"N_x={best_nnz.N_x} ({1 - best_nnz.nnz_kkt / dense.nnz_kkt:.1%} below dense); prep min at "
        f"N_x={best_prep.N_x}; {elapsed:.1f} s; failed: {[k for k, v in checks.items() if not v]}"
    )
    report(6, "benchmark sweep shape", all(checks.values()), detail)


def test_expanded_solutions_satisfy_dynamics(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    count = 0
    cases = []
    for _ in range(60):
        N = int(rng.integers(1, 16))
        cases.append((random_problem(rng, N, int(rng.integers(1, 5)), int(rng.integers(1, 3)), n_bounded=5), N))
    for prob, N in cases:
        qp = assemble_sparse_qp(prob)
        for m, p in [(None, None), (None, []), (random_windows(rng, N), random_windows(rng, N)), (random_windows(rng, N), [])]:
            sol, _, u, x = solve_expanded(qp, m, p, SolverSettings())
            res = np.abs(dynamics_residual(qp, u, x)).max()
            worst = max(worst, res / (1e-8 * (1 + np.abs(x).max())))
            count += 1
    bench = assemble_sparse_qp(benchmark_problem(0))
    for p in ([], [240], [10] * 24, None):
        _, _, u, x = solve_expanded(bench, [10] * 24, p, SolverSettings())
        worst = max(worst, np.abs(dynamics_residual(bench, u, x)).max() / (1e-8 * (1 + np.abs(x).max())))
        count += 1
    report(7, "expanded solutions satisfy dynamics", worst <= 1.0, f"{count} solves, worst residual / bound {worst:.2e}")


@pytest.mark.slow
def test_cli_outputs_repeatable(report, tmp_path):
    outs = {}
    for name, argv in {
        "sweep": ["sweep", "--benchmark", "oscillating-masses", "--seed", "3"],
        "sweep-threads": ["sweep", "--benchmark", "oscillating-masses", "--seed", "3", "--jobs", "4"],
        "simulate": ["simulate", "--benchmark", "oscillating-masses", "--pc", "10x24", "--steps", "25", "--seed", "9"],
    }.items():
        runs = []
        for k in range(2):
            path = tmp_path / f"{name}-{k}.csv"
            assert main(argv + ["--out", str(path)]) == 0
            runs.append(path.read_bytes())
        outs[name] = runs
    same = {name: runs[0] == runs[1] for name, runs in outs.items()}
    same["threads match serial"] = outs["sweep"][0] == outs["sweep-threads"][0]
    report(8, "repeatable sweep and simulate output", all(same.values()), str(same))
