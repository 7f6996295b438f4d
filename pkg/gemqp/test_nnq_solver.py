import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

import nnq_solver
from errors import ContractViolation, InputError, SizeError
from nnq_solver import NonnegQP, SolverConfig, SolverStatus


def random_gram_problem(rng, max_m=6, max_p=12):
    m = int(rng.integers(1, max_m + 1))
    p = int(rng.integers(1, max_p + 1))
    G = rng.standard_normal((m, p))
    # q = -G g keeps the objective bounded below when G G^T is singular
    return NonnegQP(G @ G.T, -(G @ rng.standard_normal(p))), G


# ---------------- TYPES ----------------
def test_problem_is_symmetrized_and_read_only():
    problem = NonnegQP([[2.0, 1.0], [1.0 + 1e-14, 2.0]], [0.0, 0.0])
    assert_array_equal(problem.M, problem.M.T)
    with pytest.raises(ValueError):
        problem.q[0] = 1.0


@pytest.mark.parametrize("M, q, error", [
    ([[1.0, 0.0], [5.0, 1.0]], [0.0, 0.0], ContractViolation),
    ([[1.0]], [0.0, 1.0], ContractViolation),
    (np.zeros((0, 0)), [], ContractViolation),
    ([[np.nan]], [0.0], InputError),
    ([[1.0]], [np.inf], InputError),
])
def test_problem_validation(M, q, error):
    with pytest.raises(error):
        NonnegQP(M, q)


@pytest.mark.parametrize("kwargs", [{"max_iters": 0}, {"tol_kkt": 0.0}, {"ridge": -1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        SolverConfig(**kwargs)


def test_config_defaults():
    config = SolverConfig()
    assert config.max_iters == 100000
    assert config.tol_kkt == 1e-10
    assert config.ridge == 0.0
    assert config.acceleration


# ---------------- KKT ----------------
@pytest.mark.parametrize("q, v, expected", [
    ([-1.0], [0.0], 1.0),
    ([1.0], [0.0], 0.0),
    ([-1.0], [1.0], 0.0),
    ([1.0], [2.0], 2.0),
])
def test_kkt_residual(q, v, expected):
    assert nnq_solver.kkt_residual(NonnegQP([[1.0]], q), v) == expected


def test_kkt_residual_rejects_negative_multiplier():
    with pytest.raises(ContractViolation, match=r"v\[1\]"):
        nnq_solver.kkt_residual(NonnegQP(np.eye(2), [0.0, 0.0]), [0.0, -1e-3])


# ---------------- PROJECTED GRADIENT ----------------
@pytest.mark.parametrize("M, q, expected", [
    ([[1.0]], [-1.0], [1.0]),
    ([[1.0]], [1.0], [0.0]),
    ([[2.0, 0.0], [0.0, 2.0]], [-2.0, 2.0], [1.0, 0.0]),
])
def test_solve_pg_examples(M, q, expected):
    result = nnq_solver.solve_pg(NonnegQP(M, q))
    assert result.status == SolverStatus.CONVERGED
    assert result.kkt_residual <= 1e-10
    assert_allclose(result.v_star, expected, atol=1e-10)


def test_solve_pg_starts_at_origin():
    result = nnq_solver.solve_pg(NonnegQP([[3.0, 1.0], [1.0, 3.0]], [0.5, 2.0]))
    assert result.iterations == 0
    assert_array_equal(result.v_star, [0.0, 0.0])


def test_solve_pg_reports_max_iters():
    problem = NonnegQP([[2.0, 1.0], [1.0, 2.0]], [-1.0, -1.0])
    result = nnq_solver.solve_pg(problem, SolverConfig(max_iters=1))
    assert result.status == SolverStatus.MAX_ITERS_REACHED
    assert result.iterations == 1
    assert_allclose(result.v_star, [0.25, 0.25])
    assert result.kkt_residual == pytest.approx(0.25)


@pytest.mark.parametrize("acceleration", [True, False])
@pytest.mark.parametrize("polish", [True, False])
def test_objective_never_increases(rng, acceleration, polish):
    config = SolverConfig(max_iters=3000, acceleration=acceleration, polish=polish)
    for _ in range(50):
        problem, _ = random_gram_problem(rng)
        history = np.array(nnq_solver.solve_pg(problem, config).history)
        slack = 1e-12 * (1.0 + np.abs(history[:-1]))
        assert np.all(np.diff(history) <= slack)


def test_solution_is_exactly_feasible(rng):
    for _ in range(200):
        problem, _ = random_gram_problem(rng)
        assert np.all(nnq_solver.solve_pg(problem).v_star >= 0)
        assert np.all(nnq_solver.solve_active_set_bruteforce(problem).v_star >= 0)


def test_solve_pg_is_deterministic(rng):
    problem, _ = random_gram_problem(rng, max_m=6)
    first = nnq_solver.solve_pg(problem)
    second = nnq_solver.solve_pg(problem)
    assert first.v_star.tobytes() == second.v_star.tobytes()
    assert first.iterations == second.iterations


def test_ridge_solves_regularized_problem():
    problem = NonnegQP([[1.0, 1.0], [1.0, 1.0]], [-1.0, -1.0])
    result = nnq_solver.solve_pg(problem, SolverConfig(ridge=1.0))
    # (M + I) v = 1 with v1 = v2 gives v = 1/3
    assert_allclose(result.v_star, [1.0 / 3.0, 1.0 / 3.0], atol=1e-9)
    # Residual and objective describe the problem as passed, not M + I
    assert result.kkt_residual == pytest.approx(1.0 / 3.0)
    assert result.kkt_residual == nnq_solver.kkt_residual(problem, result.v_star)
    assert result.objective == pytest.approx(-4.0 / 9.0)
    assert result.status == SolverStatus.RIDGE_UNCERTIFIED
    assert not result.converged


def test_small_ridge_still_certifies():
    problem = NonnegQP(np.eye(2), [-1.0, 1.0])
    result = nnq_solver.solve_pg(problem, SolverConfig(ridge=1e-12))
    assert result.status == SolverStatus.CONVERGED
    assert result.kkt_residual == nnq_solver.kkt_residual(problem, result.v_star)
    assert result.kkt_residual <= 1e-10
    assert_allclose(result.v_star, [1.0, 0.0], atol=1e-10)


# ---------------- ORACLE ----------------
def test_bruteforce_examples():
    result = nnq_solver.solve_active_set_bruteforce(NonnegQP([[1.0]], [-1.0]))
    assert_allclose(result.v_star, [1.0])
    assert result.objective == pytest.approx(-0.5)
    assert result.iterations == 2

    result = nnq_solver.solve_active_set_bruteforce(NonnegQP(np.eye(3), [0.0, 1.0, 2.0]))
    assert_array_equal(result.v_star, [0.0, 0.0, 0.0])


def test_bruteforce_singular_gram():
    problem = NonnegQP([[1.0, 1.0], [1.0, 1.0]], [-1.0, -1.0])
    result = nnq_solver.solve_active_set_bruteforce(problem)
    assert result.objective == pytest.approx(-0.5)
    assert result.v_star.sum() == pytest.approx(1.0)
    assert np.all(result.v_star >= 0)
    assert result.kkt_residual <= 1e-8


def test_bruteforce_size_limit():
    with pytest.raises(SizeError):
        nnq_solver.solve_active_set_bruteforce(NonnegQP(np.eye(17), np.zeros(17)))


def test_bruteforce_slack_follows_problem_scale(rng):
    for _ in range(100):
        problem, _ = random_gram_problem(rng)
        base = nnq_solver.solve_active_set_bruteforce(problem)
        for scale in (1e-6, 1e6):
            scaled = nnq_solver.solve_active_set_bruteforce(NonnegQP(scale * problem.M, scale * problem.q))
            assert scaled.objective == pytest.approx(scale * base.objective, rel=1e-8, abs=1e-8 * scale)
            assert scaled.kkt_residual <= 1e-8 * max(scale, 1.0)


def test_pg_matches_oracle(rng):
    for _ in range(1000):
        problem, _ = random_gram_problem(rng)
        pg = nnq_solver.solve_pg(problem)
        oracle = nnq_solver.solve_active_set_bruteforce(problem)
        assert pg.status == SolverStatus.CONVERGED
        assert oracle.kkt_residual <= 1e-8
        assert abs(pg.objective - oracle.objective) <= 1e-8 * (1 + abs(oracle.objective))


# ---------------- NNLS ----------------
def test_dual_objective_is_shifted_least_squares(rng):
    for _ in range(200):
        m, p = int(rng.integers(1, 7)), int(rng.integers(1, 13))
        G, g = rng.standard_normal((m, p)), rng.standard_normal(p)
        problem = NonnegQP(G @ G.T, -(G @ g))
        v = np.abs(rng.standard_normal(m))
        residual = G.T @ v - g
        expected = 0.5 * residual @ residual - 0.5 * g @ g
        assert problem.objective(v) == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_nnls_matches_projected_gradient(rng):
    for _ in range(200):
        m, p = int(rng.integers(1, 7)), int(rng.integers(1, 13))
        G, g = rng.standard_normal((m, p)), rng.standard_normal(p)
        lawson_hanson = nnq_solver.solve_nnls(G, g)
        pg = nnq_solver.solve_pg(NonnegQP(G @ G.T, -(G @ g)))
        assert np.all(lawson_hanson.v_star >= 0)
        assert lawson_hanson.objective == pytest.approx(pg.objective, rel=1e-8, abs=1e-8)


def test_nnls_dimension_mismatch():
    with pytest.raises(ContractViolation):
        nnq_solver.solve_nnls(np.ones((2, 3)), np.ones(2))
