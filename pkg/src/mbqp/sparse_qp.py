"""Stacked sparse QP of the MPC problem.

Unknowns are ``u = [u_0; ...; u_{N-1}]`` and ``x = [x_1; ...; x_N]``.  The
problem is::

    min  1/2 u'Ru + x'Su + 1/2 x'Qx + u'r + x'q + c
    s.t. A x = B u + w,   u_lo <= u <= u_hi

where ``A`` is unit lower block-bidiagonal with ``-A_k`` below the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .blocks import BlockMatrix
from .model import LtvModel, MpcProblem, ProblemError, validate

__all__ = [
    "SparseQp",
    "assemble_sparse_qp",
    "rollout",
    "eval_objective",
    "dynamics_residual",
    "forward_substitute",
]


@dataclass(frozen=True)
class SparseQp:
    """Block-sparse stacked QP.

    Block row/column ``k`` of the state partition is ``x_{k+1}``; block ``j`` of
    the input partition is ``u_j``.  ``S`` holds ``S_k`` at block ``(k-1, k)``
    for ``k = 1..N-1``; ``S_0`` is folded into the first block of ``r``.
    """

    N: int
    nx: int
    nu: int
    R: BlockMatrix
    S: BlockMatrix
    Q: BlockMatrix
    A: BlockMatrix
    B: BlockMatrix
    r: np.ndarray
    q: np.ndarray
    w: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    c: float

    @property
    def n_u_total(self) -> int:
        return self.N * self.nu

    @property
    def n_x_total(self) -> int:
        return self.N * self.nx

    def joint_cost_matrix(self) -> np.ndarray:
        """Dense ``[[R, S'], [S, Q]]`` in ``[u; x]`` ordering."""
        return np.block(
            [[self.R.to_dense(), self.S.T.to_dense()], [self.S.to_dense(), self.Q.to_dense()]]
        )


def _nonzero(a: np.ndarray) -> bool:
    return bool(np.any(a != 0.0))


def assemble_sparse_qp(problem: MpcProblem, check: bool = True) -> SparseQp:
    """Stack the stage data of ``problem`` into a :class:`SparseQp`.

    Zero blocks are not stored.  With ``check`` the problem is validated first
    and any violation raises :class:`ProblemError`.
    """
    if check:
        validate(problem).raise_if_failed()
    m, c = problem.model, problem.costs
    N, nx, nu = problem.horizon, problem.nx, problem.nu
    xs, us = [nx] * N, [nu] * N
    x0 = problem.x0

    R = BlockMatrix(us, us)
    Q = BlockMatrix(xs, xs)
    S = BlockMatrix(xs, us)
    A = BlockMatrix(xs, xs)
    B = BlockMatrix(xs, us)
    for k in range(N):
        R.blocks[(k, k)] = c.R_seq[k].copy()
        if _nonzero(c.Q_seq[k + 1]):
            Q.blocks[(k, k)] = c.Q_seq[k + 1].copy()
        A.set_identity(k, k)
        if k >= 1:
            if _nonzero(m.A_seq[k]):
                A.blocks[(k, k - 1)] = -m.A_seq[k]
            if _nonzero(c.S_seq[k]):
                S.blocks[(k - 1, k)] = c.S_seq[k].copy()
        if _nonzero(m.B_seq[k]):
            B.blocks[(k, k)] = m.B_seq[k].copy()

    r = np.concatenate(c.r_seq)
    r[:nu] = c.S_seq[0].T @ x0 + c.r_seq[0]
    q = np.concatenate(c.q_seq[1:])
    w = np.concatenate(m.w_seq)
    w[:nx] = m.A_seq[0] @ x0 + m.w_seq[0]
    const = 0.5 * float(x0 @ c.Q_seq[0] @ x0) + float(c.q_seq[0] @ x0)
    return SparseQp(
        N=N,
        nx=nx,
        nu=nu,
        R=R,
        S=S,
        Q=Q,
        A=A,
        B=B,
        r=r,
        q=q,
        w=w,
        u_lower=np.concatenate(problem.u_lower),
        u_upper=np.concatenate(problem.u_upper),
        c=const,
    )


def rollout(model: LtvModel, x0, u_seq) -> np.ndarray:
    """Simulate the prediction model; returns ``[x_1; ...; x_N]`` stacked."""
    N, nx, nu = model.horizon, model.nx, model.nu
    u = np.asarray(u_seq, dtype=float).reshape(-1)
    if u.size != N * nu:
        raise ProblemError(f"input sequence has {u.size} entries, expected {N * nu}")
    x = np.asarray(x0, dtype=float)
    if x.shape != (nx,):
        raise ProblemError(f"x0 has shape {x.shape}, expected {(nx,)}")
    out = np.empty(N * nx)
    for k in range(N):
        x = model.A_seq[k] @ x + model.B_seq[k] @ u[k * nu : (k + 1) * nu] + model.w_seq[k]
        out[k * nx : (k + 1) * nx] = x
    return out


def _check_uv(qp: SparseQp, u, x) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if u.size != qp.n_u_total or x.size != qp.n_x_total:
        raise ProblemError(
            f"expected u of length {qp.n_u_total} and x of length {qp.n_x_total}, "
            f"got {u.size} and {x.size}"
        )
    return u, x


def eval_objective(qp: SparseQp, u, x) -> float:
    """Objective of the stacked QP including the constant term."""
    u, x = _check_uv(qp, u, x)
    val = 0.5 * u @ qp.R.matvec(u) + x @ qp.S.matvec(u) + 0.5 * x @ qp.Q.matvec(x)
    return float(val + u @ qp.r + x @ qp.q + qp.c)


def dynamics_residual(qp: SparseQp, u, x) -> np.ndarray:
    """``A x - B u - w``."""
    u, x = _check_uv(qp, u, x)
    return qp.A.matvec(x) - qp.B.matvec(u) - qp.w


def forward_substitute(qp: SparseQp, rhs: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve ``A x = rhs`` by block forward substitution."""
    nx = qp.nx
    rhs = np.asarray(rhs, dtype=float)
    x = np.empty_like(rhs) if out is None else out
    for k in range(qp.N):
        xk = rhs[k * nx : (k + 1) * nx].copy()
        sub = qp.A.get(k, k - 1) if k else None
        if sub is not None:
            xk -= sub @ x[(k - 1) * nx : k * nx]
        x[k * nx : (k + 1) * nx] = xk
    return x
