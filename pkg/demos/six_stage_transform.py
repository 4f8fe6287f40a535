"""
Blocking and condensing a six-stage problem
===========================================

Build a random time-varying problem with ten states and five inputs, hold the
inputs over windows of one, two and three stages, and keep only the states
that close each window.  The reduced QP has the same optimum as the original
restricted to the blocked inputs, and its KKT matrix stores fewer nonzeros.
"""

import numpy as np

from mbqp import assemble_sparse_qp, build_generalized_qp, kkt_pattern, make_transform, solve_box_qp
from mbqp.condense import expand_solution
from mbqp.generators import random_problem
from mbqp.sparse_qp import dynamics_residual

rng = np.random.default_rng(0)
problem = random_problem(rng, N=6, nx=10, nu=5)
qp = assemble_sparse_qp(problem)

# Window sizes for blocking (inputs) and condensing (states).
m = [1, 2, 3]
p = [1, 2, 3]
tm = make_transform(qp, m, p)

# T repeats each free input over its window; E keeps x1, x3 and x6.
print("blocks of T:", sorted(tm.T.blocks))
print("kept states:", [k + 1 for k in tm.kept], " eliminated:", [k + 1 for k in tm.eliminated])

# The chain inverse has products of A_k below the diagonal, e.g. A4 A3 at (x5, x3).
A = problem.model.A_seq
print("Minv(5,3) == A4 @ A3:", np.allclose(tm.Minv.get(4, 2), A[4] @ A[3]))

# Compare KKT sparsity before and after.
original = build_generalized_qp(qp, make_transform(qp))
reduced = build_generalized_qp(qp, tm)
n_orig = kkt_pattern(original)[1]
n_red = kkt_pattern(reduced)[1]
print(f"KKT nonzeros: {n_orig} -> {n_red} ({n_red / n_orig:.0%})")

# Solve the reduced problem, expand back and check the full dynamics.
sol, report = solve_box_qp(reduced)
u, x = expand_solution((sol.u, sol.x), tm)
print("status:", sol.status, " iterations:", report.iterations)
print("objective:", sol.objective)
print("dynamics residual:", np.abs(dynamics_residual(qp, u, x)).max())

# Blocking restricts the inputs, so the unblocked optimum can only be lower.
free, _ = solve_box_qp(original)
print("unblocked objective:", free.objective, "<=", sol.objective)
