"""Random problem instances for tests and demonstrations."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .condense import INF_BOUND
from .model import LtvModel, MpcProblem, StageCosts


def random_problem(
    rng: np.random.Generator,
    N: int,
    nx: int,
    nu: int,
    n_bounded: Optional[int] = None,
    bound_range: tuple[float, float] = (0.05, 0.6),
    linear_terms: bool = True,
    affine: bool = True,
    rank_deficient_q: bool = False,
) -> MpcProblem:
    """Random convex LTV problem.

    Stage weights are slices of a random positive semidefinite joint matrix
    plus a positive definite input part, so every ``Q_k - S_k R_k^-1 S_k'`` is
    PSD.  ``n_bounded`` input components (all when ``None``) receive finite
    two-sided bounds; the rest use the infinite-bound sentinel.
    """
    A_seq = [rng.normal(size=(nx, nx)) * (0.9 / np.sqrt(nx)) for _ in range(N)]
    B_seq = [rng.normal(size=(nx, nu)) for _ in range(N)]
    w_seq = [rng.normal(size=nx) * 0.1 if affine else np.zeros(nx) for _ in range(N)]

    def joint():
        rank = nx + nu - (nx // 2 if rank_deficient_q else 0)
        L = rng.normal(size=(nx + nu, rank)) / np.sqrt(nx + nu)
        W = L @ L.T
        W[nx:, nx:] += 0.5 * np.eye(nu)
        return W

    Q_seq, R_seq, S_seq = [], [], []
    for _ in range(N):
        W = joint()
        Q_seq.append(W[:nx, :nx])
        S_seq.append(W[:nx, nx:])
        R_seq.append(W[nx:, nx:])
    W = joint()
    Q_seq.append(W[:nx, :nx])
    if linear_terms:
        q_seq = [rng.normal(size=nx) for _ in range(N + 1)]
        r_seq = [rng.normal(size=nu) for _ in range(N)]
    else:
        q_seq = [np.zeros(nx) for _ in range(N + 1)]
        r_seq = [np.zeros(nu) for _ in range(N)]

    total = N * nu
    n_b = total if n_bounded is None else min(n_bounded, total)
    lo = np.full(total, -INF_BOUND)
    hi = np.full(total, INF_BOUND)
    chosen = rng.choice(total, size=n_b, replace=False)
    lo[chosen] = -rng.uniform(*bound_range, size=n_b)
    hi[chosen] = rng.uniform(*bound_range, size=n_b)
    costs = StageCosts(Q_seq, R_seq, S_seq, q_seq, r_seq)
    return MpcProblem(
        LtvModel(A_seq, B_seq, w_seq),
        costs,
        list(lo.reshape(N, nu)),
        list(hi.reshape(N, nu)),
        rng.normal(size=nx),
    )


def random_windows(rng: np.random.Generator, N: int, max_len: Optional[int] = None) -> list[int]:
    """Random positive window sizes summing to ``N``."""
    max_len = max_len or N
    out: list[int] = []
    left = N
    while left:
        size = int(rng.integers(1, min(left, max_len) + 1))
        out.append(size)
        left -= size
    return out
