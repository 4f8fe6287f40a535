"""Linear time-varying MPC problem data, discretization and a benchmark plant."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

__all__ = [
    "LtvModel",
    "StageCosts",
    "MpcProblem",
    "ValidationReport",
    "ProblemError",
    "discretize_zoh",
    "oscillating_masses_continuous",
    "make_oscillating_masses",
    "validate",
    "problem_to_dict",
    "problem_from_dict",
    "save_problem",
    "load_problem",
]

PD_RTOL = 1e-10
PSD_ATOL = 1e-8


class ProblemError(ValueError):
    """Raised for malformed or inadmissible problem data."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ProblemError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _stack(seq, ndim: int, name: str) -> tuple[np.ndarray, ...]:
    return tuple(_frozen(a, ndim, f"{name}[{k}]") for k, a in enumerate(seq))


@dataclass(frozen=True)
class LtvModel:
    """Prediction model ``x_{k+1} = A_k x_k + B_k u_k + w_k`` over ``N`` stages."""

    A_seq: tuple[np.ndarray, ...]
    B_seq: tuple[np.ndarray, ...]
    w_seq: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "A_seq", _stack(self.A_seq, 2, "A_seq"))
        object.__setattr__(self, "B_seq", _stack(self.B_seq, 2, "B_seq"))
        object.__setattr__(self, "w_seq", _stack(self.w_seq, 1, "w_seq"))
        N = len(self.A_seq)
        if N < 1:
            raise ProblemError("horizon must be at least 1")
        if len(self.B_seq) != N or len(self.w_seq) != N:
            raise ProblemError(
                f"A_seq, B_seq, w_seq lengths differ: {N}, {len(self.B_seq)}, {len(self.w_seq)}"
            )
        nx = self.A_seq[0].shape[0]
        nu = self.B_seq[0].shape[1]
        if nx < 1 or nu < 1:
            raise ProblemError(f"state and input dimensions must be positive (n_x={nx}, n_u={nu})")
        for k in range(N):
            if self.A_seq[k].shape != (nx, nx):
                raise ProblemError(f"A_{k} has shape {self.A_seq[k].shape}, expected {(nx, nx)}")
            if self.B_seq[k].shape != (nx, nu):
                raise ProblemError(f"B_{k} has shape {self.B_seq[k].shape}, expected {(nx, nu)}")
            if self.w_seq[k].shape != (nx,):
                raise ProblemError(f"w_{k} has shape {self.w_seq[k].shape}, expected {(nx,)}")

    @property
    def horizon(self) -> int:
        return len(self.A_seq)

    @property
    def nx(self) -> int:
        return self.A_seq[0].shape[0]

    @property
    def nu(self) -> int:
        return self.B_seq[0].shape[1]

    @classmethod
    def time_invariant(cls, A, B, horizon: int, w=None) -> "LtvModel":
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        w = np.zeros(A.shape[0]) if w is None else np.asarray(w, dtype=float)
        return cls((A,) * horizon, (B,) * horizon, (w,) * horizon)


@dataclass(frozen=True)
class StageCosts:
    """Stage weights; ``Q_seq`` and ``q_seq`` run over stages ``0..N`` (terminal last)."""

    Q_seq: tuple[np.ndarray, ...]
    R_seq: tuple[np.ndarray, ...]
    S_seq: tuple[np.ndarray, ...]
    q_seq: tuple[np.ndarray, ...]
    r_seq: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "Q_seq", _stack(self.Q_seq, 2, "Q_seq"))
        object.__setattr__(self, "R_seq", _stack(self.R_seq, 2, "R_seq"))
        object.__setattr__(self, "S_seq", _stack(self.S_seq, 2, "S_seq"))
        object.__setattr__(self, "q_seq", _stack(self.q_seq, 1, "q_seq"))
        object.__setattr__(self, "r_seq", _stack(self.r_seq, 1, "r_seq"))

    @classmethod
    def uniform(cls, Q, R, horizon: int, S=None, q=None, r=None, Q_N=None) -> "StageCosts":
        Q = np.asarray(Q, dtype=float)
        R = np.asarray(R, dtype=float)
        nx, nu = Q.shape[0], R.shape[0]
        S = np.zeros((nx, nu)) if S is None else np.asarray(S, dtype=float)
        q = np.zeros(nx) if q is None else np.asarray(q, dtype=float)
        r = np.zeros(nu) if r is None else np.asarray(r, dtype=float)
        Q_N = Q if Q_N is None else np.asarray(Q_N, dtype=float)
        return cls(
            (Q,) * horizon + (Q_N,),
            (R,) * horizon,
            (S,) * horizon,
            (q,) * (horizon + 1),
            (r,) * horizon,
        )


@dataclass(frozen=True)
class MpcProblem:
    """Box-input-constrained LTV regulator problem for one measured state ``x0``."""

    model: LtvModel
    costs: StageCosts
    u_lower: tuple[np.ndarray, ...]
    u_upper: tuple[np.ndarray, ...]
    x0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_lower", _stack(self.u_lower, 1, "u_lower"))
        object.__setattr__(self, "u_upper", _stack(self.u_upper, 1, "u_upper"))
        object.__setattr__(self, "x0", _frozen(self.x0, 1, "x0"))

    @property
    def horizon(self) -> int:
        return self.model.horizon

    @property
    def nx(self) -> int:
        return self.model.nx

    @property
    def nu(self) -> int:
        return self.model.nu

    def with_x0(self, x0) -> "MpcProblem":
        return MpcProblem(self.model, self.costs, self.u_lower, self.u_upper, np.asarray(x0))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_failed(self) -> None:
        if self.violations:
            raise ProblemError("; ".join(self.violations))


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ProblemError(f"{name} contains non-finite entries")


def discretize_zoh(A_c, B_c, Ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization.

    Uses the exponential of the augmented matrix ``[[A_c, B_c], [0, 0]] * Ts``,
    whose top blocks are ``exp(A_c Ts)`` and ``int_0^Ts exp(A_c s) ds B_c``.

    Parameters
    ----------
    A_c : (n_x, n_x) array
    B_c : (n_x, n_u) array
    Ts : float
        Sampling period in seconds, strictly positive.
    """
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 1:
        B_c = B_c[:, None]
    _check_finite("A_c", A_c)
    _check_finite("B_c", B_c)
    if not np.isfinite(Ts) or Ts <= 0:
        raise ProblemError(f"sampling time must be positive and finite, got {Ts}")
    nx = A_c.shape[0]
    if A_c.shape != (nx, nx) or B_c.shape[0] != nx:
        raise ProblemError(f"inconsistent shapes A_c {A_c.shape}, B_c {B_c.shape}")
    nu = B_c.shape[1]
    aug = np.zeros((nx + nu, nx + nu))
    aug[:nx, :nx] = A_c
    aug[:nx, nx:] = B_c
    phi = scipy.linalg.expm(aug * Ts)
    return phi[:nx, :nx].copy(), phi[:nx, nx:].copy()


def oscillating_masses_continuous(
    n_masses: int,
    mass: float = 1.0,
    spring_k: float = 1.0,
    damping: float = 0.0,
    actuator_pairs: Optional[Sequence[tuple[int, int]]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time chain of masses between two walls.

    State ordering is ``[p_0..p_{n-1}, v_0..v_{n-1}]``.  Actuator ``j`` pushes
    mass ``a`` with ``+u_j`` and mass ``b`` with ``-u_j`` for ``(a, b)`` in
    ``actuator_pairs``; the default wires ``j`` between masses ``j`` and ``j+2``.
    """
    if n_masses < 2 or n_masses % 2:
        raise ProblemError(f"n_masses must be even and at least 2, got {n_masses}")
    if mass <= 0 or spring_k <= 0:
        raise ProblemError("mass and spring constant must be positive")
    if damping < 0:
        raise ProblemError("damping must be non-negative")
    if actuator_pairs is None:
        actuator_pairs = [(j, j + 2) for j in range(n_masses - 2)]
    if len(actuator_pairs) == 0:
        raise ProblemError(
            f"{n_masses} masses leave no interior actuators (n_u = n_masses - 2 = 0)"
        )
    n = n_masses
    # tridiagonal stiffness with wall springs at both ends
    K = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    A_c = np.zeros((2 * n, 2 * n))
    A_c[:n, n:] = np.eye(n)
    A_c[n:, :n] = -(spring_k / mass) * K
    A_c[n:, n:] = -(damping / mass) * K
    B_c = np.zeros((2 * n, len(actuator_pairs)))
    for j, (a, b) in enumerate(actuator_pairs):
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise ProblemError(f"actuator {j} must join two distinct masses, got {(a, b)}")
        B_c[n + a, j] = 1.0 / mass
        B_c[n + b, j] = -1.0 / mass
    return A_c, B_c


def make_oscillating_masses(
    n_masses: int = 6,
    mass: float = 1.0,
    spring_k: float = 1.0,
    damping: float = 0.0,
    Ts: float = 0.5,
    u_bound: float = 0.5,
    horizon: int = 240,
    x0=None,
    actuator_pairs: Optional[Sequence[tuple[int, int]]] = None,
) -> MpcProblem:
    """Oscillating-masses regulator with ``Q = I``, ``R = I`` and input box ``±u_bound``."""
    A_c, B_c = oscillating_masses_continuous(n_masses, mass, spring_k, damping, actuator_pairs)
    A, B = discretize_zoh(A_c, B_c, Ts)
    nx, nu = B.shape
    model = LtvModel.time_invariant(A, B, horizon)
    costs = StageCosts.uniform(np.eye(nx), np.eye(nu), horizon)
    lo = np.full(nu, -float(u_bound))
    hi = np.full(nu, float(u_bound))
    x0 = np.zeros(nx) if x0 is None else np.asarray(x0, dtype=float)
    return MpcProblem(model, costs, (lo,) * horizon, (hi,) * horizon, x0)


def _min_eig(M: np.ndarray) -> tuple[float, float]:
    sym = 0.5 * (M + M.T)
    ev = np.linalg.eigvalsh(sym)
    return float(ev[0]), float(ev[-1])


def validate(problem: MpcProblem) -> ValidationReport:
    """Check dimensions, definiteness of the weights and bound ordering.

    Violations are returned, never raised; each names its stage index.
    """
    rep = ValidationReport()
    v = rep.violations
    N, nx, nu = problem.horizon, problem.nx, problem.nu
    c = problem.costs

    def count(name, seq, n):
        if len(seq) != n:
            v.append(f"{name} has {len(seq)} entries, expected {n}")
            return False
        return True

    shapes_ok = all(
        [
            count("Q_seq", c.Q_seq, N + 1),
            count("q_seq", c.q_seq, N + 1),
            count("R_seq", c.R_seq, N),
            count("S_seq", c.S_seq, N),
            count("r_seq", c.r_seq, N),
            count("u_lower", problem.u_lower, N),
            count("u_upper", problem.u_upper, N),
        ]
    )
    if problem.x0.shape != (nx,):
        v.append(f"x0 has shape {problem.x0.shape}, expected {(nx,)}")
    if not shapes_ok:
        return rep

    for k in range(N + 1):
        if c.Q_seq[k].shape != (nx, nx):
            v.append(f"Q_{k} has shape {c.Q_seq[k].shape}, expected {(nx, nx)}")
        if c.q_seq[k].shape != (nx,):
            v.append(f"q_{k} has shape {c.q_seq[k].shape}, expected {(nx,)}")
    for k in range(N):
        if c.R_seq[k].shape != (nu, nu):
            v.append(f"R_{k} has shape {c.R_seq[k].shape}, expected {(nu, nu)}")
        if c.S_seq[k].shape != (nx, nu):
            v.append(f"S_{k} has shape {c.S_seq[k].shape}, expected {(nx, nu)}")
        if c.r_seq[k].shape != (nu,):
            v.append(f"r_{k} has shape {c.r_seq[k].shape}, expected {(nu,)}")
        for name, b in (("u_lower", problem.u_lower[k]), ("u_upper", problem.u_upper[k])):
            if b.shape != (nu,):
                v.append(f"{name}_{k} has shape {b.shape}, expected {(nu,)}")
    if v:
        return rep

    arrays = [problem.x0, *c.Q_seq, *c.R_seq, *c.S_seq, *c.q_seq, *c.r_seq]
    arrays += [*problem.model.A_seq, *problem.model.B_seq, *problem.model.w_seq]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        v.append("problem data contain non-finite entries")
        return rep

    for k in range(N):
        R = c.R_seq[k]
        if not np.allclose(R, R.T, rtol=0, atol=1e-12 * (1 + np.abs(R).max())):
            v.append(f"R_{k} not symmetric")
        lo, hi = _min_eig(R)
        if lo <= PD_RTOL * (1.0 + abs(hi)):
            v.append(f"R_{k} not positive definite (min eigenvalue {lo:.3g})")
            continue
        Qk = c.Q_seq[k]
        if not np.allclose(Qk, Qk.T, rtol=0, atol=1e-12 * (1 + np.abs(Qk).max())):
            v.append(f"Q_{k} not symmetric")
        S = c.S_seq[k]
        schur = Qk - S @ np.linalg.solve(R, S.T)
        if _min_eig(schur)[0] < -PSD_ATOL:
            v.append(f"Q_{k} - S_{k} R_{k}^-1 S_{k}^T not positive semidefinite")
    QN = c.Q_seq[N]
    if not np.allclose(QN, QN.T, rtol=0, atol=1e-12 * (1 + np.abs(QN).max())):
        v.append(f"Q_{N} not symmetric")
    if _min_eig(QN)[0] < -PSD_ATOL:
        v.append(f"terminal weight Q_{N} not positive semidefinite")
    for k in range(N):
        crossed = np.nonzero(problem.u_lower[k] > problem.u_upper[k])[0]
        if crossed.size:
            v.append(f"crossed input bounds at stage {k} (components {crossed.tolist()})")
    return rep


# -- JSON document ------------------------------------------------------------


def _lists(seq) -> list:
    return [np.asarray(a).tolist() for a in seq]


def problem_to_dict(problem: MpcProblem) -> dict:
    m, c = problem.model, problem.costs
    return {
        "horizon": problem.horizon,
        "model": {"A_seq": _lists(m.A_seq), "B_seq": _lists(m.B_seq), "w_seq": _lists(m.w_seq)},
        "costs": {
            "Q_seq": _lists(c.Q_seq),
            "R_seq": _lists(c.R_seq),
            "S_seq": _lists(c.S_seq),
            "q_seq": _lists(c.q_seq),
            "r_seq": _lists(c.r_seq),
        },
        "bounds": {"u_lower": _lists(problem.u_lower), "u_upper": _lists(problem.u_upper)},
        "x0": problem.x0.tolist(),
    }


def problem_from_dict(doc: dict) -> MpcProblem:
    """Build a problem from its JSON document; missing or malformed fields raise."""
    try:
        model_doc, costs_doc, bounds_doc = doc["model"], doc["costs"], doc["bounds"]
        model = LtvModel(
            [np.array(a, dtype=float) for a in model_doc["A_seq"]],
            [np.array(a, dtype=float) for a in model_doc["B_seq"]],
            [np.array(a, dtype=float) for a in model_doc["w_seq"]],
        )
        costs = StageCosts(
            *(
                [np.array(a, dtype=float) for a in costs_doc[key]]
                for key in ("Q_seq", "R_seq", "S_seq", "q_seq", "r_seq")
            )
        )
        problem = MpcProblem(
            model,
            costs,
            [np.array(a, dtype=float) for a in bounds_doc["u_lower"]],
            [np.array(a, dtype=float) for a in bounds_doc["u_upper"]],
            np.array(doc["x0"], dtype=float),
        )
    except KeyError as exc:
        raise ProblemError(f"problem document is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemError):
            raise
        raise ProblemError(f"malformed problem document: {exc}") from None
    if "horizon" in doc and int(doc["horizon"]) != problem.horizon:
        raise ProblemError(
            f"field 'horizon' is {doc['horizon']} but model has {problem.horizon} stages"
        )
    return problem


def save_problem(problem: MpcProblem, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem)))


def load_problem(path: Union[str, Path]) -> MpcProblem:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return problem_from_dict(doc)
