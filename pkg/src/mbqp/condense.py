"""Move blocking and partial state condensing of the stacked MPC QP.

Inputs are parametrized as ``u = T ut`` (blocking) and states as
``x = Y xt + G ut + b`` where ``xt`` keeps the window-closing states and the
rest are eliminated through a block-diagonal partial prediction.  Substituting
both maps into :class:`~mbqp.sparse_qp.SparseQp` gives a QP of the same shape
in ``(ut, xt)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .blocks import BlockMatrix
from .flops import FlopCounter
from .model import ProblemError
from .sparse_qp import SparseQp

__all__ = [
    "TransformError",
    "BlockingVector",
    "CondensingVector",
    "TransformMatrices",
    "GeneralizedQp",
    "blocking_matrix",
    "condensing_selectors",
    "partial_prediction",
    "make_transform",
    "build_generalized_qp",
    "expand_solution",
    "kkt_matrix",
    "kkt_pattern",
    "write_pattern",
]


class TransformError(ProblemError):
    """Inadmissible blocking or condensing vector, or mismatched dimensions."""


def _windows(values: Sequence[int], N: Optional[int], name: str, allow_empty: bool) -> tuple[int, ...]:
    vals = tuple(int(v) for v in values)
    if any(int(v) != v for v in values):
        raise TransformError(f"{name} entries must be integers")
    if not vals and not allow_empty:
        raise TransformError(f"{name} must not be empty")
    if any(v < 1 for v in vals):
        raise TransformError(f"{name} windows must be at least 1 stage, got {list(vals)}")
    if vals and N is not None and sum(vals) != N:
        raise TransformError(f"{name} sums to {sum(vals)}, horizon is {N}")
    return vals


@dataclass(frozen=True)
class BlockingVector:
    """Window sizes of move blocking; inputs inside a window share one value."""

    m: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "m", _windows(self.m, None, "blocking vector", False))

    @classmethod
    def none(cls, N: int) -> "BlockingVector":
        return cls((1,) * N)

    @property
    def N(self) -> int:
        return sum(self.m)

    @property
    def n_windows(self) -> int:
        return len(self.m)

    @property
    def j(self) -> np.ndarray:
        return np.cumsum(self.m)

    def check(self, N: int) -> None:
        _windows(self.m, N, "blocking vector", False)

    def window_of_stage(self) -> np.ndarray:
        """Window index of every input stage ``0..N-1``."""
        return np.repeat(np.arange(len(self.m)), self.m)


@dataclass(frozen=True)
class CondensingVector:
    """Window sizes of state condensing; empty means fully condensed (dense)."""

    p: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "p", _windows(self.p, None, "condensing vector", True))

    @classmethod
    def sparse(cls, N: int) -> "CondensingVector":
        return cls((1,) * N)

    @classmethod
    def dense(cls) -> "CondensingVector":
        return cls(())

    @property
    def n_kept(self) -> int:
        return len(self.p)

    @property
    def i(self) -> np.ndarray:
        """Stage indices (1-based) of the kept states."""
        return np.cumsum(self.p, dtype=int)

    def check(self, N: int) -> None:
        _windows(self.p, N, "condensing vector", True)


def _as_blocking(m) -> BlockingVector:
    return m if isinstance(m, BlockingVector) else BlockingVector(tuple(m))


def _as_condensing(p) -> CondensingVector:
    return p if isinstance(p, CondensingVector) else CondensingVector(tuple(p))


def blocking_matrix(m, nu: int, N: Optional[int] = None) -> tuple[BlockMatrix, BlockMatrix]:
    """Blocking matrix ``T`` and its left inverse ``T+ = (T'T)^-1 T'``.

    ``T`` has an identity block at ``(stage, window)``; ``T+`` averages the
    stages of each window.
    """
    m = _as_blocking(m)
    if N is not None:
        m.check(N)
    N = m.N
    win = m.window_of_stage()
    T = BlockMatrix([nu] * N, [nu] * m.n_windows)
    Tp = BlockMatrix([nu] * m.n_windows, [nu] * N)
    for j in range(N):
        g = int(win[j])
        T.set_identity(j, g)
        if m.m[g] == 1:
            Tp.set_identity(g, j)
        else:
            Tp.blocks[(g, j)] = np.eye(nu) / m.m[g]
    return T, Tp


def condensing_selectors(p, N: int, nx: int) -> tuple[BlockMatrix, BlockMatrix]:
    """Selectors ``E`` of kept states ``x_{i_1}, x_{i_2}, ...`` and ``F`` of the rest."""
    p = _as_condensing(p)
    p.check(N)
    kept = [int(i) - 1 for i in p.i]
    kept_set = set(kept)
    elim = [a for a in range(N) if a not in kept_set]
    E = BlockMatrix([nx] * N, [nx] * len(kept))
    for k, a in enumerate(kept):
        E.set_identity(a, k)
    F = BlockMatrix([nx] * N, [nx] * len(elim))
    for n, a in enumerate(elim):
        F.set_identity(a, n)
    return E, F


def _kept_blocks(E: BlockMatrix) -> list[int]:
    rows = sorted(E.blocks, key=lambda key: key[1])
    if [c for _, c in rows] != list(range(E.n_block_cols)):
        raise TransformError("E must select exactly one state block per column")
    kept = [r for r, _ in rows]
    if kept != sorted(kept):
        raise TransformError("kept states must be in increasing stage order")
    return kept


def _chains(N: int, kept: Sequence[int]) -> list[tuple[int, int]]:
    """State-block ranges ``[start, stop)`` on which the partial prediction is block diagonal.

    Each kept state opens a chain that runs up to the next kept state; states
    before the first kept one form a leading chain driven from ``x0``.
    """
    starts = [0] + [a for a in kept if a != 0]
    starts = sorted(set(starts))
    stops = starts[1:] + [N]
    return list(zip(starts, stops))


@dataclass(frozen=True)
class TransformMatrices:
    """All matrices of the combined blocking/condensing substitution.

    ``Minv`` is block diagonal over the chains returned in ``chains``; each
    diagonal window is unit lower triangular with products of ``A_k`` below
    the diagonal.  ``Npred = Minv F F' B`` and ``Gamma = Npred T``.
    """

    blocking: BlockingVector
    condensing: Optional[CondensingVector]
    T: BlockMatrix
    T_plus: BlockMatrix
    E: BlockMatrix
    F: BlockMatrix
    M: BlockMatrix
    Minv: BlockMatrix
    Npred: BlockMatrix
    Upsilon: BlockMatrix
    Gamma: BlockMatrix
    b: np.ndarray
    kept: tuple[int, ...]
    eliminated: tuple[int, ...]
    chains: tuple[tuple[int, int], ...]

    @property
    def n_inputs(self) -> int:
        return self.T.n_block_cols

    @property
    def n_kept(self) -> int:
        return len(self.kept)

    def minv_window(self, chain: int) -> np.ndarray:
        """Dense diagonal window ``chain`` of ``Minv``."""
        lo, hi = self.chains[chain]
        sub = BlockMatrix(
            self.Minv.row_sizes[lo:hi],
            self.Minv.col_sizes[lo:hi],
            {(i - lo, j - lo): v for (i, j), v in self.Minv.blocks.items() if lo <= i < hi},
        )
        return sub.to_dense()


def partial_prediction(
    qp: SparseQp,
    E: BlockMatrix,
    F: BlockMatrix,
    T: BlockMatrix,
    counter: Optional[FlopCounter] = None,
    T_plus: Optional[BlockMatrix] = None,
    blocking: Optional[BlockingVector] = None,
    condensing: Optional[CondensingVector] = None,
) -> TransformMatrices:
    """Partial state prediction ``x = Minv E xt + Minv F F' (B u + w)``.

    ``Minv`` is built chain by chain from products of the ``A_k``; no global
    inverse is formed and ``F F'`` is applied as a row selection.
    """
    N, nx, nu = qp.N, qp.nx, qp.nu
    if E.row_sizes != (nx,) * N or F.row_sizes != (nx,) * N:
        raise TransformError("selectors do not match the state partition of the QP")
    if E.n_block_cols + F.n_block_cols != N:
        raise TransformError("E and F must together select every state exactly once")
    if T.row_sizes != (nu,) * N:
        raise TransformError("blocking matrix does not match the input partition of the QP")
    kept = _kept_blocks(E)
    elim = sorted(r for r, _ in F.blocks)
    if set(kept) & set(elim) or len(set(kept) | set(elim)) != N:
        raise TransformError("E and F overlap or leave states unselected")
    chains = _chains(N, kept)
    kept_set = set(kept)

    # M = E E' + F F' A  (kept rows become identity rows)
    M = BlockMatrix(qp.A.row_sizes, qp.A.col_sizes)
    for (i, j), blk in qp.A.blocks.items():
        if i in kept_set:
            continue
        M.blocks[(i, j)] = blk.copy()
        if (i, j) in qp.A.identity:
            M.identity.add((i, j))
    for a in kept:
        M.set_identity(a, a)

    Minv = BlockMatrix(qp.A.row_sizes, qp.A.col_sizes)
    for lo, hi in chains:
        for a in range(lo, hi):
            Minv.set_identity(a, a)
            sub = qp.A.get(a, a - 1) if a > lo else None
            if sub is None:
                continue
            Ak = -sub
            Minv.blocks[(a, a - 1)] = Ak
            for bcol in range(lo, a - 1):
                prev = Minv.get(a - 1, bcol)
                if prev is None:
                    continue
                Minv.blocks[(a, bcol)] = Ak @ prev
                if counter is not None:
                    counter.gemm(nx, nx, nx)

    # F F' B and F F' w: drop the kept rows
    elim_set = set(elim)
    FFB = BlockMatrix(
        qp.B.row_sizes,
        qp.B.col_sizes,
        {k: v for k, v in qp.B.blocks.items() if k[0] in elim_set},
    )
    FFw = qp.w.copy()
    for a in kept:
        FFw[a * nx : (a + 1) * nx] = 0.0

    Npred = Minv.matmul(FFB, counter)
    Gamma = Npred.matmul(T, counter)
    if elim:
        b = Minv.matvec(FFw, counter)
    else:
        b = np.zeros(N * nx)
    Upsilon = Minv.matmul(E, counter)

    if T_plus is None:
        counts = np.zeros(T.n_block_cols, dtype=int)
        for _, g in T.blocks:
            counts[g] += 1
        T_plus = BlockMatrix(T.col_sizes, T.row_sizes)
        for (j, g) in T.blocks:
            if counts[g] == 1:
                T_plus.set_identity(g, j)
            else:
                T_plus.blocks[(g, j)] = np.eye(nu) / counts[g]
    if blocking is None:
        counts = np.zeros(T.n_block_cols, dtype=int)
        for _, g in T.blocks:
            counts[g] += 1
        blocking = BlockingVector(tuple(int(c) for c in counts))
    if condensing is None:
        condensing = CondensingVector(tuple(np.diff([0] + [a + 1 for a in kept]).tolist()))

    return TransformMatrices(
        blocking=blocking,
        condensing=condensing,
        T=T,
        T_plus=T_plus,
        E=E,
        F=F,
        M=M,
        Minv=Minv,
        Npred=Npred,
        Upsilon=Upsilon,
        Gamma=Gamma,
        b=b,
        kept=tuple(kept),
        eliminated=tuple(elim),
        chains=tuple(chains),
    )


def make_transform(qp: SparseQp, m=None, p=None, counter: Optional[FlopCounter] = None) -> TransformMatrices:
    """Transform for blocking vector ``m`` and condensing vector ``p``.

    ``None`` means no blocking / no condensing (all-ones windows); pass an
    empty ``p`` for the fully condensed problem.
    """
    m = BlockingVector.none(qp.N) if m is None else _as_blocking(m)
    p = CondensingVector.sparse(qp.N) if p is None else _as_condensing(p)
    m.check(qp.N)
    p.check(qp.N)
    T, Tp = blocking_matrix(m, qp.nu)
    E, F = condensing_selectors(p, qp.N, qp.nx)
    return partial_prediction(qp, E, F, T, counter, T_plus=Tp, blocking=m, condensing=p)


@dataclass(frozen=True)
class GeneralizedQp:
    """Transformed QP in ``(ut, xt)``.

    ``min 1/2 ut'R ut + xt'S ut + 1/2 xt'Q xt + ut'r + xt'q + c``
    subject to ``A xt = B ut + w`` and ``u_lower <= ut <= u_upper``.
    """

    R: BlockMatrix
    S: BlockMatrix
    Q: BlockMatrix
    A: BlockMatrix
    B: BlockMatrix
    r: np.ndarray
    q: np.ndarray
    w: np.ndarray
    c: float
    u_lower: np.ndarray
    u_upper: np.ndarray
    u_warm: np.ndarray
    nu: int
    nx: int
    kept_stages: tuple[int, ...] = ()
    symmetry_defect: float = 0.0
    u_sizes: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.u_sizes:
            object.__setattr__(self, "u_sizes", tuple(self.R.row_sizes))

    @property
    def N_u(self) -> int:
        return self.R.n_block_rows

    @property
    def N_x(self) -> int:
        return self.Q.n_block_rows

    @property
    def n_u_total(self) -> int:
        return self.R.shape[0]

    @property
    def n_x_total(self) -> int:
        return self.Q.shape[0]

    def objective(self, ut, xt) -> float:
        ut = np.asarray(ut, dtype=float)
        xt = np.asarray(xt, dtype=float)
        val = 0.5 * ut @ self.R.matvec(ut) + 0.5 * xt @ self.Q.matvec(xt)
        if self.n_x_total:
            val += xt @ self.S.matvec(ut) + xt @ self.q
        return float(val + ut @ self.r + self.c)

    def joint_cost_matrix(self) -> np.ndarray:
        return np.block(
            [[self.R.to_dense(), self.S.T.to_dense()], [self.S.to_dense(), self.Q.to_dense()]]
        )

    @classmethod
    def from_arrays(
        cls,
        R,
        r,
        u_lower,
        u_upper,
        *,
        Q=None,
        S=None,
        A=None,
        B=None,
        q=None,
        w=None,
        c: float = 0.0,
    ) -> "GeneralizedQp":
        """Single-block QP from dense arrays, mainly for tests and small examples.

        Without ``Q`` there are no state variables and no equality rows.
        """
        R = np.atleast_2d(np.asarray(R, dtype=float))
        nu = R.shape[0]
        r = np.asarray(r, dtype=float).reshape(nu)
        nx = 0 if Q is None else np.atleast_2d(Q).shape[0]
        us, xs = [nu], ([nx] if nx else [])

        def bm(a, rs, cs):
            out = BlockMatrix(rs, cs)
            if a is not None and rs and cs:
                out.blocks[(0, 0)] = np.array(np.atleast_2d(a), dtype=float).reshape(rs[0], cs[0])
            return out

        return cls(
            R=bm(R, us, us),
            S=bm(S, xs, us),
            Q=bm(Q, xs, xs),
            A=bm(np.eye(nx) if A is None and nx else A, xs, xs),
            B=bm(B, xs, us),
            r=r,
            q=np.zeros(nx) if q is None else np.asarray(q, dtype=float).reshape(nx),
            w=np.zeros(nx) if w is None else np.asarray(w, dtype=float).reshape(nx),
            c=float(c),
            u_lower=np.broadcast_to(np.asarray(u_lower, dtype=float), (nu,)).copy(),
            u_upper=np.broadcast_to(np.asarray(u_upper, dtype=float), (nu,)).copy(),
            u_warm=np.zeros(nu),
            nu=nu,
            nx=nx,
        )


SYMMETRY_RTOL = 1e-12
# bound magnitudes at or beyond this are treated as absent
INF_BOUND = 1e20


def build_generalized_qp(
    qp: SparseQp,
    tm: TransformMatrices,
    counter: Optional[FlopCounter] = None,
    strict_bounds: bool = False,
    u_warm: Optional[np.ndarray] = None,
) -> GeneralizedQp:
    """Substitute the transform into the stacked QP.

    With ``strict_bounds`` each window takes the tightest stage bounds instead
    of their average, so no admitted input violates an original stage bound.
    """
    T, Y, G, b = tm.T, tm.Upsilon, tm.Gamma, tm.b
    if T.row_sizes != qp.R.row_sizes or Y.row_sizes != qp.Q.row_sizes:
        raise TransformError("transform was built for a QP of different dimensions")
    kept = list(tm.kept)
    has_b = bool(tm.eliminated)

    ST = qp.S.matmul(T, counter)
    P = qp.Q.matmul(G, counter).add(ST, counter)
    R_t = T.T.matmul(qp.R, counter).matmul(T, counter)
    R_t = R_t.add(G.T.matmul(P, counter), counter).add(ST.T.matmul(G, counter), counter)
    S_t = Y.T.matmul(P, counter)
    Q_t = Y.T.matmul(qp.Q.matmul(Y, counter), counter)
    EtA = qp.A.select_rows(kept)
    A_t = EtA.matmul(Y, counter)
    B_t = qp.B.matmul(T, counter).select_rows(kept).sub(EtA.matmul(G, counter), counter)

    R_t, dev_r = R_t.symmetrize()
    Q_t, dev_q = Q_t.symmetrize()
    scale = 1.0 + max(
        [float(np.abs(v).max()) for v in list(R_t.blocks.values()) + list(Q_t.blocks.values())]
        or [0.0]
    )
    defect = max(dev_r, dev_q) / scale
    if defect > SYMMETRY_RTOL:
        raise TransformError(f"transformed Hessian asymmetric by {defect:.3g} (relative)")

    nx = qp.nx
    kept_rows = np.concatenate([np.arange(a * nx, (a + 1) * nx) for a in kept]) if kept else np.zeros(0, int)
    r_t = T.rmatvec(qp.r, counter)
    if has_b:
        Qb = qp.Q.matvec(b, counter)
        qQb = qp.q + Qb
        if counter is not None:
            counter.add(qp.q.size)
        r_t = r_t + ST.rmatvec(b, counter) + G.rmatvec(qQb, counter)
        if counter is not None:
            counter.add(2 * r_t.size)
        q_t = Y.rmatvec(qQb, counter)
        w_t = qp.w[kept_rows] - EtA.matvec(b, counter)
        if counter is not None:
            counter.add(w_t.size)
            counter.dot(b.size)
            counter.dot(b.size)
            counter.add(3)
        c_t = qp.c + float(b @ qp.q) + 0.5 * float(b @ Qb)
    else:
        q_t = Y.rmatvec(qp.q, counter)
        w_t = qp.w[kept_rows].copy()
        c_t = qp.c

    u_lo, u_hi = _window_bounds(qp, tm, strict_bounds, counter)
    if u_warm is None:
        warm = np.zeros(T.shape[1])
    else:
        warm = tm.T_plus.matvec(np.asarray(u_warm, dtype=float), counter)

    return GeneralizedQp(
        R=R_t,
        S=S_t,
        Q=Q_t,
        A=A_t,
        B=B_t,
        r=r_t,
        q=q_t,
        w=w_t,
        c=c_t,
        u_lower=u_lo,
        u_upper=u_hi,
        u_warm=warm,
        nu=qp.nu,
        nx=qp.nx,
        kept_stages=tuple(a + 1 for a in kept),
        symmetry_defect=defect,
    )


def _window_bounds(qp: SparseQp, tm: TransformMatrices, strict: bool, counter):
    nu = qp.nu
    lo = qp.u_lower.reshape(-1, nu)
    hi = qp.u_upper.reshape(-1, nu)
    win = tm.blocking.window_of_stage()
    n_win = tm.blocking.n_windows
    if not strict:
        # an infinite stage bound keeps the window average infinite
        lo_inf = np.array([(lo[win == g] <= -INF_BOUND).any(axis=0) for g in range(n_win)]).reshape(-1)
        hi_inf = np.array([(hi[win == g] >= INF_BOUND).any(axis=0) for g in range(n_win)]).reshape(-1)
        out_lo = tm.T_plus.matvec(qp.u_lower, counter)
        out_hi = tm.T_plus.matvec(qp.u_upper, counter)
        out_lo[lo_inf] = -INF_BOUND
        out_hi[hi_inf] = INF_BOUND
        return out_lo, out_hi
    out_lo = np.array([lo[win == g].max(axis=0) for g in range(n_win)]).reshape(-1)
    out_hi = np.array([hi[win == g].min(axis=0) for g in range(n_win)]).reshape(-1)
    return out_lo, out_hi


def expand_solution(sol_tilde, tm: TransformMatrices) -> tuple[np.ndarray, np.ndarray]:
    """Map ``(ut, xt)`` back to ``(u, x) = (T ut, Y xt + G ut + b)``."""
    ut, xt = sol_tilde
    ut = np.asarray(ut, dtype=float).reshape(-1)
    xt = np.asarray(xt, dtype=float).reshape(-1)
    if ut.size != tm.T.shape[1] or xt.size != tm.Upsilon.shape[1]:
        raise TransformError(
            f"expected ut of length {tm.T.shape[1]} and xt of length {tm.Upsilon.shape[1]}"
        )
    u = tm.T.matvec(ut)
    x = tm.Gamma.matvec(ut) + tm.b
    if xt.size:
        x = x + tm.Upsilon.matvec(xt)
    return u, x


def kkt_matrix(gqp: GeneralizedQp) -> BlockMatrix:
    """Equality-constrained KKT matrix ``[[R, S', B'], [S, Q, A'], [B, A, 0]]``.

    Block columns are the input windows, then kept states, then multipliers.
    """
    us = list(gqp.R.row_sizes)
    xs = list(gqp.Q.row_sizes)
    nu_b, nx_b = len(us), len(xs)
    sizes = us + xs + xs
    K = BlockMatrix(sizes, sizes)

    def put(src: BlockMatrix, r0: int, c0: int, transpose: bool = False):
        for (i, j), blk in src.blocks.items():
            key = (r0 + j, c0 + i) if transpose else (r0 + i, c0 + j)
            K.blocks[key] = blk.T.copy() if transpose else blk.copy()
            if (i, j) in src.identity:
                K.identity.add(key)

    put(gqp.R, 0, 0)
    put(gqp.S, 0, nu_b, transpose=True)
    put(gqp.B, 0, nu_b + nx_b, transpose=True)
    put(gqp.S, nu_b, 0)
    put(gqp.Q, nu_b, nu_b)
    put(gqp.A, nu_b, nu_b + nx_b, transpose=True)
    put(gqp.B, nu_b + nx_b, 0)
    put(gqp.A, nu_b + nx_b, nu_b)
    return K


def kkt_pattern(gqp: GeneralizedQp) -> tuple[tuple[np.ndarray, np.ndarray], int]:
    """Structural pattern ``(rows, cols)`` of the KKT matrix and its nonzero count."""
    K = kkt_matrix(gqp)
    rows, cols = K.pattern()
    return (rows, cols), int(rows.size)


def write_pattern(gqp: GeneralizedQp, path: Union[str, Path]) -> int:
    """Write the KKT pattern as 0-based ``row col`` lines; returns the line count."""
    (rows, cols), nnz = kkt_pattern(gqp)
    text = "".join(f"{r} {c}\n" for r, c in zip(rows.tolist(), cols.tolist()))
    Path(path).write_text(text)
    return nnz
