"""
How much to condense
====================

Sweep the condensing level of the oscillating-masses benchmark at a fixed
blocking of 24 windows of 10 stages.  Every row solves an equivalent QP; they
differ only in how many states are kept.  Preparation cost grows with
condensing while solve cost shrinks, so the cheapest total lies in between.
"""

import time

from mbqp.cli import SweepConfig, benchmark_problem, p_family, run_sweep

problem = benchmark_problem(seed=0)
m = [10] * 24
family = p_family(problem.horizon, m)

t0 = time.perf_counter()
rows = run_sweep(SweepConfig(problem, m, family))
print(f"{len(rows)} condensing levels in {time.perf_counter() - t0:.1f} s\n")

print(f"{'N_x':>4} {'prep':>11} {'solve':>11} {'total':>11} {'nnz':>7} {'iters':>5}")
for r in rows:
    print(f"{r.N_x:4d} {r.prep_flops:11.3e} {r.solve_flops:11.3e} {r.total_flops:11.3e} {r.nnz_kkt:7d} {r.iterations:5d}")

best = min(rows, key=lambda r: r.total_flops)
dense = [r for r in rows if r.N_x == 0][0]
lean = min(rows, key=lambda r: r.nnz_kkt)
print(f"\ncheapest total at N_x = {best.N_x}: {dense.total_flops / best.total_flops:.1f}x below dense")
print(f"fewest nonzeros at N_x = {lean.N_x}: {1 - lean.nnz_kkt / dense.nnz_kkt:.0%} below dense")
print(f"objective spread across rows: {max(r.objective for r in rows) - min(r.objective for r in rows):.2e}")
