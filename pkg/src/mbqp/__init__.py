"""Move-blocked, partially condensed MPC quadratic programs.

Build a stacked sparse QP from a time-varying linear model, reduce it with
input blocking and partial state condensing, and solve the result with an
instrumented interior-point method.
"""

from .condense import (
    BlockingVector,
    CondensingVector,
    GeneralizedQp,
    TransformError,
    TransformMatrices,
    blocking_matrix,
    build_generalized_qp,
    condensing_selectors,
    expand_solution,
    kkt_pattern,
    make_transform,
    partial_prediction,
    write_pattern,
)
from .flops import FlopCounter
from .model import (
    LtvModel,
    MpcProblem,
    ProblemError,
    StageCosts,
    ValidationReport,
    discretize_zoh,
    load_problem,
    make_oscillating_masses,
    save_problem,
    validate,
)
from .solver import (
    Solution,
    SolveReport,
    SolverError,
    SolverSettings,
    kkt_residuals,
    solve_box_qp,
    solve_box_qp_bruteforce,
)
from .sparse_qp import SparseQp, assemble_sparse_qp, dynamics_residual, eval_objective, rollout

__version__ = "0.1.0"
