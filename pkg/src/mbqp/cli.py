"""Command-line front end: solve, condensing-level sweeps, closed-loop runs, patterns.

Examples::

    mbqp solve --benchmark oscillating-masses --mb 10x24 --pc 20x12 --out sol.json
    mbqp sweep --benchmark oscillating-masses --mb 10x24 --pc family --out sweep.csv
    mbqp simulate --benchmark oscillating-masses --mb 10x24 --pc 10x24 --steps 100 --out sim.csv
    mbqp pattern --problem prob.json --pc 1,2,3 --out kkt.txt

Comma lists accept ``VxR`` tokens for ``R`` repeats of ``V``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .condense import (
    build_generalized_qp,
    expand_solution,
    kkt_pattern,
    make_transform,
    write_pattern,
)
from .flops import FlopCounter
from .model import MpcProblem, ProblemError, load_problem, make_oscillating_masses
from .rng import XorShift64Star
from .solver import SolverError, SolverSettings, solve_box_qp
from .sparse_qp import assemble_sparse_qp

__all__ = [
    "SweepConfig",
    "SimConfig",
    "SweepRow",
    "parse_windows",
    "p_family",
    "benchmark_problem",
    "run_solve",
    "run_sweep",
    "run_simulation",
    "main",
]

DIVISOR_COUNTS = (1, 2, 3, 4, 5, 6, 8, 12, 15, 16, 20, 24)
SPLIT_LENGTHS = (30, 40, 48, 60, 80, 120, 240)
SWEEP_COLUMNS = (
    "N_x",
    "prep_flops",
    "solve_flops",
    "total_flops",
    "nnz_kkt",
    "factor_fill",
    "iterations",
    "objective",
)
EQUIVALENCE_TOL = 1e-6


class CliError(Exception):
    pass


# -- transform specs ----------------------------------------------------------------


def parse_windows(text: str, name: str) -> list[int]:
    """Parse ``"1,2,3"`` or ``"10x24"``-style window lists; ``"empty"`` gives ``[]``."""
    text = text.strip()
    if text in ("", "empty"):
        return []
    out: list[int] = []
    for pos, token in enumerate(text.split(","), start=1):
        token = token.strip()
        try:
            if "x" in token:
                value, reps = token.split("x")
                out.extend([int(value)] * int(reps))
            else:
                out.append(int(token))
        except ValueError:
            raise CliError(f"{name}: entry {pos} ({token!r}) is not an integer or VxR token") from None
    return out


def _split_front(windows: list[int], length: int) -> list[int]:
    """Halve the largest window (front-most on ties) until ``length`` windows exist."""
    out = list(windows)
    while len(out) < length:
        big = max(out)
        if big < 2:
            raise CliError(f"cannot split {len(windows)} windows into {length}")
        k = out.index(big)
        out[k : k + 1] = [(big + 1) // 2, big // 2]
    return out


def p_family(N: int, base: Sequence[int]) -> list[list[int]]:
    """Condensing vectors of the sweep: dense, equal divisor windows, and splits of ``base``.

    For ``N = 240`` and ``base = [10]*24`` this gives 20 vectors with lengths
    0, 1, 2, 3, 4, 5, 6, 8, 12, 15, 16, 20, 24, 30, 40, 48, 60, 80, 120, 240.
    """
    family: list[list[int]] = [[]]
    for i in DIVISOR_COUNTS:
        if N % i == 0:
            family.append([N // i] * i)
    for length in SPLIT_LENGTHS:
        if len(base) < length <= N:
            family.append(_split_front(list(base), length))
    seen: set[tuple[int, ...]] = set()
    unique = []
    for p in family:
        if tuple(p) not in seen:
            seen.add(tuple(p))
            unique.append(p)
    return unique


def benchmark_problem(seed: int = 0, x0_amp: float = 1.0) -> MpcProblem:
    """Oscillating masses with seeded displacements in ``[-x0_amp, x0_amp]``."""
    prob = make_oscillating_masses()
    rng = XorShift64Star(seed)
    x0 = np.zeros(prob.nx)
    x0[: prob.nx // 2] = rng.uniform(-x0_amp, x0_amp, prob.nx // 2)
    return prob.with_x0(x0)


# -- configurations -----------------------------------------------------------------


@dataclass
class SweepConfig:
    problem: MpcProblem
    m: Optional[list[int]] = None
    p_list: list[list[int]] = field(default_factory=list)
    settings: SolverSettings = field(default_factory=SolverSettings)
    strict_bounds: bool = False
    jobs: int = 1
    out: Optional[Path] = None

    def __post_init__(self):
        N = self.problem.horizon
        if self.m is not None and (sum(self.m) != N or min(self.m, default=0) < 1):
            raise CliError(f"--mb must be positive windows summing to {N}")
        if not self.p_list:
            raise CliError("sweep needs at least one condensing vector")
        for p in self.p_list:
            if p and (sum(p) != N or min(p) < 1):
                raise CliError(f"condensing vector {p} is not positive windows summing to {N}")
        if self.jobs < 1:
            raise CliError("--jobs must be at least 1")


@dataclass
class SimConfig:
    problem: MpcProblem
    steps: int = 100
    amp: float = 0.5
    seed: int = 0
    m: Optional[list[int]] = None
    p: Optional[list[int]] = None
    settings: SolverSettings = field(default_factory=SolverSettings)
    strict_bounds: bool = False
    disturbed: Optional[list[int]] = None
    out: Optional[Path] = None

    def __post_init__(self):
        if self.steps < 1:
            raise CliError("--steps must be at least 1")
        if not self.amp >= 0:
            raise CliError("--amp must be non-negative")
        if self.disturbed is None:
            self.disturbed = list(range(self.problem.nx // 2))


# -- core runs ----------------------------------------------------------------------


@dataclass
class SolveOutcome:
    u: np.ndarray
    x: np.ndarray
    solution: object
    report: object


def run_solve(problem, m=None, p=None, settings=None, strict_bounds=False, check=True) -> SolveOutcome:
    """Transform, solve and expand one problem; FLOPs of the transform go to ``prep_flops``."""
    qp = assemble_sparse_qp(problem, check=check)
    counter = FlopCounter()
    tm = make_transform(qp, m, p, counter)
    gqp = build_generalized_qp(qp, tm, counter, strict_bounds=strict_bounds)
    sol, report = solve_box_qp(gqp, settings, prep_flops=counter.total)
    if sol.status == "infeasible_bounds":
        return SolveOutcome(np.full(qp.n_u_total, np.nan), np.full(qp.n_x_total, np.nan), sol, report)
    u, x = expand_solution((sol.u, sol.x), tm)
    return SolveOutcome(u, x, sol, report)


@dataclass(frozen=True)
class SweepRow:
    p: tuple[int, ...]
    N_x: int
    prep_flops: int
    solve_flops: int
    total_flops: int
    nnz_kkt: int
    factor_fill: int
    iterations: int
    objective: float
    status: str

    def values(self) -> list:
        return [getattr(self, c) for c in SWEEP_COLUMNS]


def _sweep_row(cfg: SweepConfig, p: list[int]) -> SweepRow:
    out = run_solve(cfg.problem, cfg.m, p, cfg.settings, cfg.strict_bounds, check=False)
    rep, sol = out.report, out.solution
    return SweepRow(
        p=tuple(p),
        N_x=len(p),
        prep_flops=rep.prep_flops,
        solve_flops=rep.solve_flops,
        total_flops=rep.total_flops,
        nnz_kkt=rep.nnz_kkt,
        factor_fill=rep.factor_fill,
        iterations=rep.iterations,
        objective=float(sol.objective),
        status=sol.status,
    )


def _describe(p: Sequence[int]) -> str:
    return "empty" if not p else ",".join(map(str, p))


def run_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """One row per condensing vector, sorted by ``N_x`` descending.

    Aborts with :class:`CliError` if any solve fails or if an objective strays
    from the median by more than the equivalence tolerance.
    """
    from .model import validate

    validate(cfg.problem).raise_if_failed()
    if cfg.jobs == 1:
        rows = [_sweep_row(cfg, p) for p in cfg.p_list]
    else:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(lambda p: _sweep_row(cfg, p), cfg.p_list))
    for row in rows:
        if row.status != "converged":
            raise CliError(f"solve failed for p = [{_describe(row.p)}]: status {row.status}")
    objs = np.array([r.objective for r in rows])
    med = float(np.median(objs))
    dev = np.abs(objs - med) / (1.0 + abs(med))
    if dev.max() > EQUIVALENCE_TOL:
        lines = [f"  p = [{_describe(r.p)}]: objective {r.objective!r}, deviation {d:.3g}" for r, d in zip(rows, dev)]
        raise CliError(
            f"sweep objectives disagree (median {med!r}, tolerance {EQUIVALENCE_TOL}):\n" + "\n".join(lines)
        )
    order = sorted(range(len(rows)), key=lambda k: (-rows[k].N_x, k))
    return [rows[k] for k in order]


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
    return buf.getvalue()


def run_simulation(cfg: SimConfig) -> str:
    """Receding-horizon loop; returns the trajectory CSV text.

    The plant applies stage-0 dynamics plus seeded uniform noise on the
    disturbed states.  A failed solve keeps the previous input and sets the
    ``failed`` flag of the row.
    """
    from .model import validate

    problem = cfg.problem
    validate(problem).raise_if_failed()
    nx, nu = problem.nx, problem.nu
    A0, B0 = problem.model.A_seq[0], problem.model.B_seq[0]
    rng = XorShift64Star(cfg.seed)
    x = np.array(problem.x0, dtype=float)
    u_prev = np.zeros(nu)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["step"]
        + [f"x{i}" for i in range(nx)]
        + [f"u{j}" for j in range(nu)]
        + ["objective", "solve_flops", "iterations", "failed"]
    )
    for step in range(cfg.steps):
        settings = cfg.settings
        if step:
            # the cost matrices do not depend on the measured state
            settings = SolverSettings(
                kkt_tol=settings.kkt_tol,
                comp_tol=settings.comp_tol,
                max_iters=settings.max_iters,
                reg=settings.reg,
                refine_steps=settings.refine_steps,
                check_convexity=False,
            )
        failed = 0
        try:
            out = run_solve(problem.with_x0(x), cfg.m, cfg.p, settings, cfg.strict_bounds, check=False)
            objective = float(out.solution.objective)
            flops, iters = out.report.solve_flops, out.report.iterations
            if out.solution.status == "converged":
                u_apply = out.u[:nu].copy()
            else:
                failed, u_apply = 1, u_prev
        except SolverError:
            failed, u_apply = 1, u_prev
            objective, flops, iters = float("nan"), 0, 0
        writer.writerow(
            [step]
            + [repr(float(v)) for v in x]
            + [repr(float(v)) for v in u_apply]
            + [repr(objective), flops, iters, failed]
        )
        v = np.zeros(nx)
        v[cfg.disturbed] = rng.uniform(-cfg.amp, cfg.amp, len(cfg.disturbed))
        x = A0 @ x + B0 @ u_apply + v
        u_prev = u_apply
    return buf.getvalue()


# -- argument handling --------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbqp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, pc_help):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--problem", type=Path, help="problem JSON file")
        src.add_argument("--benchmark", choices=["oscillating-masses"])
        sp.add_argument("--mb", default=None, help="blocking windows (default: none, or 10x24 for the benchmark)")
        sp.add_argument("--pc", default=None, help=pc_help)
        sp.add_argument("--seed", type=int, default=0, help="seed for benchmark state and disturbances")
        sp.add_argument("--out", type=Path, default=None, help="output path (default: stdout)")
        sp.add_argument("--strict-bounds", action="store_true", help="tightest bound inside each blocking window")
        sp.add_argument("--tol", type=float, default=1e-8, help="KKT and complementarity tolerance")
        sp.add_argument("--max-iters", type=int, default=50)

    common(sub.add_parser("solve", help="solve one problem and write JSON"), "condensing windows, 'empty' for dense (default: all ones)")
    sw = sub.add_parser("sweep", help="sweep condensing vectors and write CSV")
    common(sw, "condensing windows, 'empty', or 'family' (default)")
    sw.add_argument("--jobs", type=int, default=1, help="rows solved concurrently")
    sim = sub.add_parser("simulate", help="closed-loop receding-horizon run, CSV trajectory")
    common(sim, "condensing windows, 'empty' for dense (default: all ones)")
    sim.add_argument("--steps", type=int, default=100)
    sim.add_argument("--amp", type=float, default=0.5, help="uniform disturbance amplitude")
    common(sub.add_parser("pattern", help="write KKT sparsity pattern as 0-based row col lines"), "condensing windows, 'empty' for dense (default: all ones)")
    return parser


def _load(args) -> tuple[MpcProblem, Optional[list[int]]]:
    if args.problem is not None:
        try:
            problem = load_problem(args.problem)
        except OSError as exc:
            raise CliError(f"{args.problem}: {exc.strerror}") from None
        default_m = None
    else:
        problem = benchmark_problem(args.seed)
        default_m = [10] * 24
    m = parse_windows(args.mb, "--mb") if args.mb is not None else default_m
    if m == []:
        m = None
    return problem, m


def _single_p(args) -> Optional[list[int]]:
    if args.pc is None:
        return None
    if args.pc.strip() == "family":
        raise CliError("--pc family is only valid for sweep")
    return parse_windows(args.pc, "--pc")


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _settings(args) -> SolverSettings:
    try:
        return SolverSettings(kkt_tol=args.tol, comp_tol=args.tol, max_iters=args.max_iters)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_solve(args) -> int:
    problem, m = _load(args)
    out = run_solve(problem, m, _single_p(args), _settings(args), args.strict_bounds)
    sol, rep = out.solution, out.report
    N, nx, nu = problem.horizon, problem.nx, problem.nu
    doc = {
        "status": sol.status,
        "objective": None if not np.isfinite(sol.objective) else float(sol.objective),
        "u": out.u.reshape(N, nu).tolist() if sol.status != "infeasible_bounds" else None,
        "x": out.x.reshape(N, nx).tolist() if sol.status != "infeasible_bounds" else None,
        "report": {
            "iterations": rep.iterations,
            "prep_flops": rep.prep_flops,
            "solve_flops": rep.solve_flops,
            "total_flops": rep.total_flops,
            "nnz_kkt": rep.nnz_kkt,
            "factor_fill": rep.factor_fill,
        },
    }
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    if sol.status != "converged":
        print(f"mbqp: solve ended with status {sol.status}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    problem, m = _load(args)
    pc = "family" if args.pc is None else args.pc.strip()
    if pc == "family":
        p_list = p_family(problem.horizon, m if m else [1] * problem.horizon)
    else:
        p_list = [parse_windows(pc, "--pc")]
    cfg = SweepConfig(problem, m, p_list, _settings(args), args.strict_bounds, args.jobs, args.out)
    rows = run_sweep(cfg)
    _emit(sweep_csv(rows), args.out)
    return 0


def cmd_simulate(args) -> int:
    problem, m = _load(args)
    if args.benchmark is not None:
        problem = problem.with_x0(np.zeros(problem.nx))
    cfg = SimConfig(
        problem,
        steps=args.steps,
        amp=args.amp,
        seed=args.seed,
        m=m,
        p=_single_p(args),
        settings=_settings(args),
        strict_bounds=args.strict_bounds,
        out=args.out,
    )
    _emit(run_simulation(cfg), args.out)
    return 0


def cmd_pattern(args) -> int:
    problem, m = _load(args)
    qp = assemble_sparse_qp(problem)
    tm = make_transform(qp, m, _single_p(args))
    gqp = build_generalized_qp(qp, tm, strict_bounds=args.strict_bounds)
    if args.out is None:
        (rows, cols), _ = kkt_pattern(gqp)
        sys.stdout.write("".join(f"{r} {c}\n" for r, c in zip(rows, cols)))
    else:
        write_pattern(gqp, args.out)
    return 0


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "simulate": cmd_simulate, "pattern": cmd_pattern}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, ProblemError, SolverError) as exc:
        print(f"mbqp {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
