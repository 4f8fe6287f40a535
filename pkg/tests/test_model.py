import json
from math import factorial

import numpy as np
import pytest

from mbqp.generators import random_problem
from mbqp.model import (
    LtvModel,
    MpcProblem,
    ProblemError,
    StageCosts,
    discretize_zoh,
    load_problem,
    make_oscillating_masses,
    oscillating_masses_continuous,
    problem_from_dict,
    problem_to_dict,
    save_problem,
    validate,
)


def series_zoh(A_c, B_c, Ts, terms=40):
    """Truncated Taylor series of exp(A Ts) and its integral applied to B."""
    n = A_c.shape[0]
    Ad = np.zeros((n, n))
    integral = np.zeros((n, n))
    P = np.eye(n)
    for k in range(terms):
        Ad += P * Ts**k / factorial(k)
        integral += P * Ts ** (k + 1) / factorial(k + 1)
        P = P @ A_c
    return Ad, integral @ B_c


def test_zoh_matches_series(rng):
    A_c = rng.normal(size=(4, 4))
    B_c = rng.normal(size=(4, 2))
    Ad, Bd = discretize_zoh(A_c, B_c, 0.3)
    As, Bs = series_zoh(A_c, B_c, 0.3)
    np.testing.assert_allclose(Ad, As, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(Bd, Bs, rtol=1e-12, atol=1e-13)


def test_zoh_double_integrator():
    Ts = 0.7
    Ad, Bd = discretize_zoh(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), Ts)
    np.testing.assert_allclose(Ad, [[1.0, Ts], [0.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(Bd, [[Ts**2 / 2], [Ts]], atol=1e-15)


def test_zoh_semigroup(rng):
    A_c = rng.normal(size=(3, 3))
    B_c = rng.normal(size=(3, 1))
    A1, B1 = discretize_zoh(A_c, B_c, 0.25)
    A2, B2 = discretize_zoh(A_c, B_c, 0.5)
    np.testing.assert_allclose(A2, A1 @ A1, atol=1e-13)
    np.testing.assert_allclose(B2, A1 @ B1 + B1, atol=1e-13)


def test_undamped_masses_keep_unit_modulus():
    A_c, B_c = oscillating_masses_continuous(6)
    Ad, _ = discretize_zoh(A_c, B_c, 0.5)
    np.testing.assert_allclose(np.abs(np.linalg.eigvals(Ad)), 1.0, atol=1e-12)


def test_zoh_rejects_bad_input():
    with pytest.raises(ProblemError):
        discretize_zoh(np.eye(2), np.ones((2, 1)), 0.0)
    with pytest.raises(ProblemError):
        discretize_zoh(np.array([[np.nan]]), np.ones((1, 1)), 0.1)


def test_oscillating_masses_layout():
    prob = make_oscillating_masses()
    assert (prob.nx, prob.nu, prob.horizon) == (12, 4, 240)
    A_c, B_c = oscillating_masses_continuous(6)
    # actuator j pulls mass j against mass j+2
    for j in range(4):
        col = B_c[6:, j]
        assert col[j] == 1.0 and col[j + 2] == -1.0 and np.count_nonzero(col) == 2
    np.testing.assert_array_equal(A_c[:6, 6:], np.eye(6))
    assert A_c[6, 0] == -2.0 and A_c[6, 1] == 1.0
    assert np.all(prob.u_upper[0] == 0.5) and np.all(prob.u_lower[-1] == -0.5)


@pytest.mark.parametrize("n", [2, 3, 0])
def test_oscillating_masses_rejects_degenerate_sizes(n):
    with pytest.raises(ProblemError):
        make_oscillating_masses(n_masses=n)


def test_valid_random_problem_passes(rng):
    assert validate(random_problem(rng, 5, 3, 2)).ok


def replace_costs(prob, **kw):
    c = prob.costs
    fields = dict(Q_seq=c.Q_seq, R_seq=c.R_seq, S_seq=c.S_seq, q_seq=c.q_seq, r_seq=c.r_seq)
    fields.update(kw)
    return MpcProblem(prob.model, StageCosts(**fields), prob.u_lower, prob.u_upper, prob.x0)


def test_indefinite_input_weight_named(rng):
    prob = random_problem(rng, 4, 2, 2)
    R = list(prob.costs.R_seq)
    R[2] = np.diag([1.0, -1.0])
    rep = validate(replace_costs(prob, R_seq=R))
    assert not rep.ok
    assert any("R_2 not positive definite" in v for v in rep.violations)


def test_cross_weight_breaking_convexity_named(rng):
    prob = random_problem(rng, 3, 2, 1)
    S = list(prob.costs.S_seq)
    S[1] = np.full((2, 1), 100.0)
    rep = validate(replace_costs(prob, S_seq=S))
    assert any("S_1" in v for v in rep.violations)


def test_crossed_bounds_named(rng):
    prob = random_problem(rng, 4, 2, 2)
    lo = list(prob.u_lower)
    lo[3] = np.array([5.0, -1.0])
    bad = MpcProblem(prob.model, prob.costs, lo, prob.u_upper, prob.x0)
    rep = validate(bad)
    assert any("stage 3" in v for v in rep.violations)
    with pytest.raises(ProblemError, match="stage 3"):
        rep.raise_if_failed()


def test_count_and_finiteness_violations(rng):
    prob = random_problem(rng, 3, 2, 1)
    short = replace_costs(prob, R_seq=prob.costs.R_seq[:2])
    assert any("R_seq has 2 entries" in v for v in validate(short).violations)
    x0 = np.array([np.inf, 0.0])
    assert any("non-finite" in v for v in validate(prob.with_x0(x0)).violations)


def test_terminal_weight_must_be_psd(rng):
    prob = random_problem(rng, 3, 2, 1)
    Q = list(prob.costs.Q_seq)
    Q[-1] = -np.eye(2)
    assert any("terminal" in v for v in validate(replace_costs(prob, Q_seq=Q)).violations)


def test_model_rejects_inconsistent_shapes():
    with pytest.raises(ProblemError):
        LtvModel([np.eye(2), np.eye(3)], [np.ones((2, 1))] * 2, [np.zeros(2)] * 2)


def test_json_round_trip_is_exact(rng, tmp_path):
    prob = random_problem(rng, 4, 3, 2, n_bounded=3)
    path = tmp_path / "p.json"
    save_problem(prob, path)
    back = load_problem(path)
    assert problem_to_dict(back) == problem_to_dict(prob)
    for a, b in zip(back.model.A_seq, prob.model.A_seq):
        assert np.array_equal(a, b)
    assert json.loads(path.read_text())["horizon"] == 4


def test_json_errors_carry_context(rng, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "model": {\n    "A_seq": [1, 2,\n')
    with pytest.raises(ProblemError, match="line"):
        load_problem(path)
    doc = problem_to_dict(random_problem(rng, 2, 1, 1))
    del doc["costs"]["R_seq"]
    with pytest.raises(ProblemError, match="R_seq"):
        problem_from_dict(doc)
    doc = problem_to_dict(random_problem(rng, 2, 1, 1))
    doc["horizon"] = 3
    with pytest.raises(ProblemError, match="horizon"):
        problem_from_dict(doc)


def test_problem_arrays_are_read_only(rng):
    prob = random_problem(rng, 2, 2, 1)
    with pytest.raises(ValueError):
        prob.x0[0] = 1.0
