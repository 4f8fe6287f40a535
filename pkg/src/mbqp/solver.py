"""Interior-point and enumeration solvers for the generalized box-constrained QP.

The interior-point method is Mehrotra's predictor-corrector applied to::

    min 1/2 z'Hz + g'z   s.t.  C z = d,  lb <= ut <= ub,   z = [ut; xt]

with ``H = [[R, S'], [S, Q]]``, ``C = [-B, A]`` and ``d = w``.  Its Newton
systems are solved by a block ``LDL^T`` factorization over a stage-interleaved
ordering: each kept stage contributes one pivot block holding its state and
multiplier, and each input window follows the last stage it couples to.  Fill
stays inside the block profile of that ordering.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import lapack

from .blocks import BlockMatrix
from .condense import INF_BOUND, GeneralizedQp
from .flops import FlopCounter

__all__ = [
    "SolverSettings",
    "Solution",
    "SolveReport",
    "SolverError",
    "NonConvexError",
    "BlockLdl",
    "solve_box_qp",
    "solve_box_qp_bruteforce",
    "kkt_residuals",
    "stage_ordering",
]

BRUTEFORCE_MAX_BOUNDED = 14


class SolverError(RuntimeError):
    pass


class NonConvexError(SolverError):
    """The joint cost matrix has a clearly negative eigenvalue."""


@dataclass(frozen=True)
class SolverSettings:
    kkt_tol: float = 1e-8
    comp_tol: float = 1e-8
    max_iters: int = 50
    reg: float = 1e-10
    flop_model: str = "unit"
    refine_steps: int = 2
    check_convexity: bool = True
    psd_tol: float = 1e-8

    def __post_init__(self):
        if not (self.kkt_tol > 0 and self.comp_tol > 0 and self.reg > 0):
            raise ValueError("tolerances and regularization must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.flop_model != "unit":
            raise ValueError(f"unknown FLOP model {self.flop_model!r}")


@dataclass
class Solution:
    u: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    objective: float
    status: str

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class SolveReport:
    iterations: int = 0
    prep_flops: int = 0
    solve_flops: int = 0
    nnz_kkt: int = 0
    factor_fill: int = 0
    band_fill: int = 0
    barrier: list[float] = field(default_factory=list)
    residuals: tuple[float, float, float, float] = (np.inf, np.inf, np.inf, np.inf)

    @property
    def total_flops(self) -> int:
        return self.prep_flops + self.solve_flops


# -- problem data in dense-vector form ---------------------------------------------


def _finite_masks(gqp: GeneralizedQp) -> tuple[np.ndarray, np.ndarray]:
    return gqp.u_lower > -INF_BOUND, gqp.u_upper < INF_BOUND


def _hess_vec(gqp: GeneralizedQp, u, x, counter=None):
    hu = gqp.R.matvec(u, counter)
    if gqp.n_x_total:
        hu = hu + gqp.S.rmatvec(x, counter)
        hx = gqp.S.matvec(u, counter) + gqp.Q.matvec(x, counter)
        if counter is not None:
            counter.add(hu.size + hx.size)
    else:
        hx = np.zeros(0)
    return hu, hx


def _cons_vec(gqp: GeneralizedQp, u, x, counter=None):
    """``C z - d = A x - B u - w``."""
    if not gqp.n_x_total:
        return np.zeros(0)
    out = gqp.A.matvec(x, counter) - gqp.B.matvec(u, counter) - gqp.w
    if counter is not None:
        counter.add(2 * out.size)
    return out


def _cons_t_vec(gqp: GeneralizedQp, lam, counter=None):
    """``C' lam`` split into input and state parts."""
    if not gqp.n_x_total:
        return np.zeros(gqp.n_u_total), np.zeros(0)
    return -gqp.B.rmatvec(lam, counter), gqp.A.rmatvec(lam, counter)


def kkt_residuals(gqp: GeneralizedQp, sol: Solution) -> tuple[float, float, float, float]:
    """Infinity norms of stationarity, equality, bound and complementarity residuals.

    Multipliers follow ``H z + g + C'lam - mu_lower + mu_upper = 0`` (input
    rows) with ``C = [-B, A]``.  Negative bound multipliers are reported as
    complementarity violations.
    """
    lo_fin, hi_fin = _finite_masks(gqp)
    u, x = np.asarray(sol.u, float), np.asarray(sol.x, float)
    hu, hx = _hess_vec(gqp, u, x)
    cu, cx = _cons_t_vec(gqp, np.asarray(sol.lam, float))
    mu_l = np.where(lo_fin, sol.mu_lower, 0.0)
    mu_u = np.where(hi_fin, sol.mu_upper, 0.0)
    ru = hu + gqp.r + cu - mu_l + mu_u
    rx = hx + gqp.q + cx
    stat = float(max(np.abs(ru).max(initial=0.0), np.abs(rx).max(initial=0.0)))
    eq = float(np.abs(_cons_vec(gqp, u, x)).max(initial=0.0))
    viol = np.concatenate(
        [
            np.where(lo_fin, gqp.u_lower - u, 0.0),
            np.where(hi_fin, u - gqp.u_upper, 0.0),
        ]
    )
    bound = float(np.maximum(viol, 0.0).max(initial=0.0))
    comp_terms = np.concatenate(
        [
            np.abs(mu_l * np.where(lo_fin, u - gqp.u_lower, 0.0)),
            np.abs(mu_u * np.where(hi_fin, gqp.u_upper - u, 0.0)),
            np.maximum(-mu_l, 0.0),
            np.maximum(-mu_u, 0.0),
        ]
    )
    comp = float(comp_terms.max(initial=0.0))
    return stat, eq, bound, comp


# -- ordering and block factorization -----------------------------------------------


def stage_ordering(gqp: GeneralizedQp) -> list[tuple[str, int]]:
    """Pivot-block sequence: ``("x", k)`` for kept stage ``k`` (state and
    multiplier), ``("u", g)`` for input window ``g``.

    Each input window is placed right after the last kept stage whose state or
    dynamics row it enters; windows coupled to no stage go first.
    """
    last = {g: -1 for g in range(gqp.N_u)}
    for src in (gqp.B, gqp.S):
        for k, g in src.blocks:
            last[g] = max(last[g], k)
    order: list[tuple[str, int]] = [("u", g) for g in range(gqp.N_u) if last[g] < 0]
    after: dict[int, list[int]] = {}
    for g, k in last.items():
        if k >= 0:
            after.setdefault(k, []).append(g)
    for k in range(gqp.N_x):
        order.append(("x", k))
        order.extend(("u", g) for g in sorted(after.get(k, [])))
    return order


def _natural_kkt(gqp: GeneralizedQp, reg: float) -> sp.csr_matrix:
    """``[[H, C'], [C, -reg I]]`` in natural ``[ut; xt; lam]`` order."""
    nU, nX = gqp.n_u_total, gqp.n_x_total
    R = gqp.R.to_sparse()
    if nX == 0:
        return R.tocsr()
    S = gqp.S.to_sparse()
    Q = gqp.Q.to_sparse()
    A = gqp.A.to_sparse()
    B = gqp.B.to_sparse()
    K = sp.bmat(
        [
            [R, S.T, -B.T],
            [S, Q, A.T],
            [-B, A, -reg * sp.identity(nX, format="csr")],
        ],
        format="csr",
    )
    return K


class BlockLdl:
    """Block ``LDL^T`` over a fixed partition, restricted to the block profile.

    Pivot blocks are factored with symmetric indefinite (Bunch-Kaufman)
    pivoting, which permutes only inside a block and so keeps the profile.
    """

    def __init__(self, sizes: list[int], pattern: set[tuple[int, int]]):
        self.sizes = sizes
        self.G = len(sizes)
        self.off = np.concatenate(([0], np.cumsum(sizes))).astype(int)
        first = list(range(self.G))
        for r, c in pattern:
            if c < r:
                first[r] = min(first[r], c)
        self.first = first
        self.rows_of_col: list[list[int]] = [[] for _ in range(self.G)]
        for r in range(self.G):
            for c in range(first[r], r):
                self.rows_of_col[c].append(r)
        self.L: dict[tuple[int, int], np.ndarray] = {}
        self.Y: dict[tuple[int, int], np.ndarray] = {}
        self.D: list = [None] * self.G

    @property
    def fill(self) -> int:
        """Stored nonzeros of the factor: lower triangles of pivots plus profile blocks."""
        total = 0
        for r in range(self.G):
            n = self.sizes[r]
            total += n * (n + 1) // 2
            for c in range(self.first[r], r):
                total += n * self.sizes[c]
        return total

    def band_fill(self) -> int:
        """Symbolic fill of a scalar band factorization with the same ordering."""
        n = int(self.off[-1])
        width = 0
        for r in range(self.G):
            width = max(width, int(self.off[r + 1] - 1 - self.off[self.first[r]]))
        i = np.arange(n)
        return int(np.sum(np.minimum(i, width) + 1))

    def factor(self, blocks: dict[tuple[int, int], np.ndarray], counter: FlopCounter) -> None:
        sizes, first = self.sizes, self.first
        L, Y = {}, {}
        for r in range(self.G):
            nr = sizes[r]
            for c in range(first[r], r + 1):
                nc = sizes[c]
                acc = blocks.get((r, c))
                acc = np.zeros((nr, nc)) if acc is None else acc.copy()
                for j in range(max(first[r], first[c]), c):
                    acc -= Y[(r, j)] @ L[(c, j)].T
                    counter.gemm(nr, sizes[j], nc, accumulate=True)
                if c < r:
                    Y[(r, c)] = acc
                    lu, piv = self.D[c]
                    sol, info = lapack.dsytrs(lu, piv, acc.T.copy(), lower=1)
                    if info != 0:
                        raise SolverError(f"pivot solve failed (info={info})")
                    L[(r, c)] = sol.T
                    counter.ldl_solve(nc, nr)
                else:
                    sym = 0.5 * (acc + acc.T)
                    lu, piv, info = lapack.dsytrf(sym, lower=1)
                    counter.ldl_factor(nr)
                    if info != 0:
                        raise SolverError(f"singular pivot block {r} (info={info})")
                    self.D[r] = (lu, piv)
        self.L, self.Y = L, Y

    def solve(self, rhs: np.ndarray, counter: FlopCounter) -> np.ndarray:
        off, sizes = self.off, self.sizes
        z = np.array(rhs, dtype=float)
        for r in range(self.G):
            seg = z[off[r] : off[r + 1]]
            for c in range(self.first[r], r):
                seg -= self.L[(r, c)] @ z[off[c] : off[c + 1]]
                counter.matvec(sizes[r], sizes[c], accumulate=True)
        for r in range(self.G):
            lu, piv = self.D[r]
            sol, info = lapack.dsytrs(lu, piv, z[off[r] : off[r + 1]].copy(), lower=1)
            z[off[r] : off[r + 1]] = sol
            counter.ldl_solve(sizes[r], 1)
        for c in range(self.G - 1, -1, -1):
            seg = z[off[c] : off[c + 1]]
            for r in self.rows_of_col[c]:
                seg -= self.L[(r, c)].T @ z[off[r] : off[r + 1]]
                counter.matvec(sizes[c], sizes[r], accumulate=True)
        return z


class _NewtonSystem:
    """Permuted KKT, its block partition and the factorization per iteration."""

    def __init__(self, gqp: GeneralizedQp, reg: float):
        nU, nX = gqp.n_u_total, gqp.n_x_total
        u_off = np.concatenate(([0], np.cumsum(gqp.R.row_sizes))).astype(int)
        x_off = np.concatenate(([0], np.cumsum(gqp.Q.row_sizes))).astype(int)
        perm: list[np.ndarray] = []
        sizes: list[int] = []
        for kind, idx in stage_ordering(gqp):
            if kind == "u":
                seg = np.arange(u_off[idx], u_off[idx + 1])
            else:
                xs = np.arange(x_off[idx], x_off[idx + 1])
                seg = np.concatenate([nU + xs, nU + nX + xs])
            perm.append(seg)
            sizes.append(seg.size)
        self.perm = np.concatenate(perm) if perm else np.zeros(0, int)
        self.inv = np.empty_like(self.perm)
        self.inv[self.perm] = np.arange(self.perm.size)
        self.n = self.perm.size
        self.nU = nU
        K0 = _natural_kkt(gqp, reg)
        self.K_reg = K0[self.perm][:, self.perm].tocsr()
        K_true = _natural_kkt(gqp, 0.0)
        self.K_true = K_true[self.perm][:, self.perm].tocsr()
        self.K_true.eliminate_zeros()
        self.group = np.repeat(np.arange(len(sizes)), sizes)
        coo = self.K_reg.tocoo()
        gr, gc = self.group[coo.row], self.group[coo.col]
        pattern = set(zip(gr.tolist(), gc.tolist()))
        self.ldl = BlockLdl(sizes, pattern)
        off = self.ldl.off
        self.base: dict[tuple[int, int], np.ndarray] = {}
        for r in range(self.ldl.G):
            rows = self.K_reg[off[r] : off[r + 1]]
            for c in range(self.ldl.first[r], r + 1):
                blk = rows[:, off[c] : off[c + 1]]
                if blk.nnz:
                    self.base[(r, c)] = blk.toarray()
        # input coordinates inside their pivot block
        pu = self.inv[:nU]
        self.u_group = self.group[pu]
        self.u_local = pu - off[self.u_group]
        self.nnz_true = int(self.K_true.nnz)

    def factor(self, sigma: np.ndarray, counter: FlopCounter) -> None:
        blocks = dict(self.base)
        touched: dict[int, np.ndarray] = {}
        for g in np.unique(self.u_group):
            blk = blocks.get((g, g))
            n = self.ldl.sizes[g]
            touched[g] = np.zeros((n, n)) if blk is None else blk.copy()
        for i in range(self.nU):
            if sigma[i] != 0.0:
                touched[self.u_group[i]][self.u_local[i], self.u_local[i]] += sigma[i]
        counter.add(int(np.count_nonzero(sigma)))
        for g, blk in touched.items():
            blocks[(g, g)] = blk
        self.sigma = sigma
        self.ldl.factor(blocks, counter)

    def _matvec_true(self, v: np.ndarray, counter: FlopCounter) -> np.ndarray:
        out = self.K_true @ v
        counter.add(2 * self.K_true.nnz)
        sig = np.zeros(self.n)
        sig[self.inv[: self.nU]] = self.sigma
        out += sig * v
        counter.add(2 * self.n)
        return out

    def solve(self, rhs_nat: np.ndarray, tol: float, steps: int, counter: FlopCounter) -> np.ndarray:
        rhs = rhs_nat[self.perm]
        sol = self.ldl.solve(rhs, counter)
        scale = 1.0 + np.abs(rhs).max(initial=0.0)
        for _ in range(steps):
            res = rhs - self._matvec_true(sol, counter)
            counter.add(self.n)
            if np.abs(res).max(initial=0.0) <= tol * scale:
                break
            sol = sol + self.ldl.solve(res, counter)
            counter.add(self.n)
        out = np.empty_like(sol)
        out[self.perm] = sol
        return out


def _check_convexity(gqp: GeneralizedQp, tol: float) -> None:
    J = gqp.joint_cost_matrix()
    if J.size == 0:
        return
    J = 0.5 * (J + J.T)
    shift = tol * (1.0 + np.abs(J).max())
    try:
        scipy.linalg.cholesky(J + shift * np.eye(J.shape[0]), lower=True)
        return
    except np.linalg.LinAlgError:
        pass
    ev = np.linalg.eigvalsh(J)[0]
    if ev < -tol * (1.0 + np.abs(J).max()):
        raise NonConvexError(f"joint cost matrix has eigenvalue {ev:.3g}")


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_box_qp(
    gqp: GeneralizedQp,
    settings: Optional[SolverSettings] = None,
    prep_flops: int = 0,
) -> tuple[Solution, SolveReport]:
    """Solve the generalized QP with a primal-dual predictor-corrector method.

    Returns the solution in transformed coordinates and a report whose
    ``solve_flops`` counts every assembly, factorization, solve and residual
    operation of the iterations.
    """
    settings = settings or SolverSettings()
    counter = FlopCounter()
    nU, nX = gqp.n_u_total, gqp.n_x_total
    lb, ub = gqp.u_lower, gqp.u_upper
    report = SolveReport(prep_flops=int(prep_flops))
    from .condense import kkt_pattern  # local to avoid a cycle at import time

    report.nnz_kkt = kkt_pattern(gqp)[1]

    lo_fin, hi_fin = _finite_masks(gqp)
    crossed = np.nonzero(lo_fin & hi_fin & (lb > ub))[0]
    if crossed.size:
        sol = Solution(
            u=np.clip(gqp.u_warm, lb, ub),
            x=np.zeros(nX),
            lam=np.zeros(nX),
            mu_lower=np.zeros(nU),
            mu_upper=np.zeros(nU),
            objective=np.nan,
            status="infeasible_bounds",
        )
        return sol, report
    if settings.check_convexity:
        _check_convexity(gqp, settings.psd_tol)

    L = np.nonzero(lo_fin)[0]
    U = np.nonzero(hi_fin)[0]
    n_comp = L.size + U.size

    system = _NewtonSystem(gqp, settings.reg)
    report.factor_fill = system.ldl.fill
    report.band_fill = system.ldl.band_fill()

    # infeasible start: slacks decoupled from the bounds, positive
    u = np.array(gqp.u_warm, dtype=float)
    x = np.zeros(nX)
    lam = np.zeros(nX)
    if L.size and U.size:
        both = lo_fin & hi_fin
        mid = 0.5 * (lb + ub)
        u = np.where(both & ((u <= lb) | (u >= ub)), mid, u)
    s_l = np.maximum(u[L] - lb[L], 1.0)
    s_u = np.maximum(ub[U] - u[U], 1.0)
    mu_l = np.ones(L.size)
    mu_u = np.ones(U.size)

    def residuals():
        hu, hx = _hess_vec(gqp, u, x, counter)
        cu, cx = _cons_t_vec(gqp, lam, counter)
        rd_u = hu + gqp.r + cu
        rd_u[L] -= mu_l
        rd_u[U] += mu_u
        rd_x = hx + gqp.q + cx
        counter.add(2 * nU + 2 * nX + n_comp)
        rp = _cons_vec(gqp, u, x, counter)
        rl = u[L] - lb[L] - s_l
        ru = ub[U] - u[U] - s_u
        counter.add(2 * n_comp)
        return rd_u, rd_x, rp, rl, ru

    def solution(status: str) -> Solution:
        mu_lower = np.zeros(nU)
        mu_upper = np.zeros(nU)
        mu_lower[L] = mu_l
        mu_upper[U] = mu_u
        return Solution(
            u=u.copy(),
            x=x.copy(),
            lam=lam.copy(),
            mu_lower=mu_lower,
            mu_upper=mu_upper,
            objective=gqp.objective(u, x),
            status=status,
        )

    barrier_prev = np.inf
    status = "max_iters"
    for it in range(settings.max_iters + 1):
        current = solution("converged")
        res = kkt_residuals(gqp, current)
        report.residuals = res
        stat, eq, bnd, comp = res
        if (
            stat <= settings.kkt_tol
            and eq <= settings.kkt_tol
            and bnd <= settings.kkt_tol
            and comp <= settings.comp_tol
        ):
            status = "converged"
            break
        if it == settings.max_iters:
            break
        report.iterations = it + 1

        rd_u, rd_x, rp, rl, ru = residuals()
        mu = (s_l @ mu_l + s_u @ mu_u) / n_comp if n_comp else 0.0
        counter.add(2 * n_comp)
        sigma = np.zeros(nU)
        np.add.at(sigma, L, mu_l / s_l)
        np.add.at(sigma, U, mu_u / s_u)
        counter.add(2 * n_comp)
        system.factor(sigma, counter)

        def direction(rcl, rcu):
            rhs_u = -rd_u.copy()
            rhs_u[L] += (rcl - mu_l * rl) / s_l
            rhs_u[U] -= (rcu - mu_u * ru) / s_u
            counter.add(4 * n_comp + nU)
            rhs = np.concatenate([rhs_u, -rd_x, -rp])
            d = system.solve(rhs, settings.kkt_tol * 1e-2, settings.refine_steps, counter)
            du, dx, dlam = d[:nU], d[nU : nU + nX], d[nU + nX :]
            ds_l = du[L] + rl
            ds_u = ru - du[U]
            dmu_l = (rcl - mu_l * ds_l) / s_l
            dmu_u = (rcu - mu_u * ds_u) / s_u
            counter.add(8 * n_comp)
            return du, dx, dlam, ds_l, ds_u, dmu_l, dmu_u

        # predictor
        aff = direction(-s_l * mu_l, -s_u * mu_u)
        counter.add(2 * n_comp)
        _, _, _, ds_l, ds_u, dmu_l, dmu_u = aff
        alpha = min(
            _max_step(s_l, ds_l), _max_step(s_u, ds_u), _max_step(mu_l, dmu_l), _max_step(mu_u, dmu_u)
        )
        if n_comp:
            mu_aff = (
                (s_l + alpha * ds_l) @ (mu_l + alpha * dmu_l)
                + (s_u + alpha * ds_u) @ (mu_u + alpha * dmu_u)
            ) / n_comp
            counter.add(8 * n_comp)
            sig = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            target = min(sig * mu, barrier_prev)
            barrier_prev = target
            report.barrier.append(float(target))
            rcl = -s_l * mu_l - ds_l * dmu_l + target
            rcu = -s_u * mu_u - ds_u * dmu_u + target
            counter.add(6 * n_comp)
            du, dx, dlam, ds_l, ds_u, dmu_l, dmu_u = direction(rcl, rcu)
            alpha = 0.995 * min(
                _max_step(s_l, ds_l),
                _max_step(s_u, ds_u),
                _max_step(mu_l, dmu_l),
                _max_step(mu_u, dmu_u),
            )
            alpha = min(alpha, 1.0)
        else:
            du, dx, dlam = aff[:3]
            alpha = 1.0
        u = u + alpha * du
        x = x + alpha * dx
        lam = lam + alpha * dlam
        s_l = s_l + alpha * ds_l
        s_u = s_u + alpha * ds_u
        mu_l = mu_l + alpha * dmu_l
        mu_u = mu_u + alpha * dmu_u
        counter.add(2 * (nU + 2 * nX + 2 * n_comp))

    report.solve_flops = counter.total
    return solution(status), report


# -- enumeration oracle -------------------------------------------------------------


def _dense_data(gqp: GeneralizedQp):
    H = gqp.joint_cost_matrix()
    g = np.concatenate([gqp.r, gqp.q])
    nU, nX = gqp.n_u_total, gqp.n_x_total
    if nX:
        C = np.hstack([-gqp.B.to_dense(), gqp.A.to_dense()])
    else:
        C = np.zeros((0, nU))
    return H, g, C, gqp.w.copy()


def solve_box_qp_bruteforce(gqp: GeneralizedQp, feas_tol: float = 1e-9) -> Solution:
    """Global optimum by enumerating every active-set assignment.

    Each bounded input is lower-active, upper-active or free; every candidate
    is an equality-constrained QP solved through its dense KKT system.
    Candidates with singular KKT systems are skipped.
    """
    lo_fin, hi_fin = _finite_masks(gqp)
    lb, ub = gqp.u_lower, gqp.u_upper
    bounded = np.nonzero(lo_fin | hi_fin)[0]
    if bounded.size > BRUTEFORCE_MAX_BOUNDED:
        raise SolverError(
            f"{bounded.size} bounded inputs exceed the enumeration limit of {BRUTEFORCE_MAX_BOUNDED}"
        )
    nU, nX = gqp.n_u_total, gqp.n_x_total
    if np.any(lo_fin & hi_fin & (lb > ub)):
        return Solution(
            np.clip(np.zeros(nU), lb, ub), np.zeros(nX), np.zeros(nX),
            np.zeros(nU), np.zeros(nU), np.nan, "infeasible_bounds",
        )
    H, g, C, d = _dense_data(gqp)
    n = nU + nX
    m = C.shape[0]
    options = []
    for i in bounded:
        opts = [0]
        if lo_fin[i]:
            opts.append(-1)
        if hi_fin[i]:
            opts.append(1)
        options.append(opts)

    best = None
    for assignment in itertools.product(*options):
        fixed = [(i, a) for i, a in zip(bounded, assignment) if a != 0]
        nf = len(fixed)
        K = np.zeros((n + m + nf, n + m + nf))
        K[:n, :n] = H
        K[:n, n : n + m] = C.T
        K[n : n + m, :n] = C
        rhs = np.concatenate([-g, d, np.zeros(nf)])
        for t, (i, a) in enumerate(fixed):
            K[i, n + m + t] = 1.0
            K[n + m + t, i] = 1.0
            rhs[n + m + t] = lb[i] if a < 0 else ub[i]
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(sol)):
            continue
        if np.abs(K @ sol - rhs).max() > 1e-8 * (1.0 + np.abs(rhs).max()):
            continue
        z = sol[:n]
        u = z[:nU]
        tol_l = feas_tol * (1.0 + np.abs(np.where(lo_fin, lb, 0.0)))
        tol_u = feas_tol * (1.0 + np.abs(np.where(hi_fin, ub, 0.0)))
        if np.any(lo_fin & (u < lb - tol_l)) or np.any(hi_fin & (u > ub + tol_u)):
            continue
        nu_fix = sol[n + m :]
        mu_lower = np.zeros(nU)
        mu_upper = np.zeros(nU)
        ok = True
        for t, (i, a) in enumerate(fixed):
            # stationarity: H z + g + C'lam + nu = 0, nu = -mu_lower or +mu_upper
            if a < 0:
                mu_lower[i] = -nu_fix[t]
                ok &= mu_lower[i] >= -feas_tol
            else:
                mu_upper[i] = nu_fix[t]
                ok &= mu_upper[i] >= -feas_tol
        if not ok:
            continue
        obj = gqp.objective(u, z[nU:])
        if best is None or obj < best.objective:
            best = Solution(u.copy(), z[nU:].copy(), sol[n : n + m].copy(), mu_lower, mu_upper, obj, "converged")
    if best is None:
        raise SolverError("no active set produced a KKT point")
    return best
