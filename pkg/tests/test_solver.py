import math

import numpy as np
import pytest

from psibsde.errors import ConditioningError, DomainError, StepSizeError
from psibsde.instances import closed_form_y0, make_generator, make_terminal, truncated_gaussian_mean
from psibsde.kernel import TimeGrid, generate_paths
from psibsde.solver import (GeneratorSpec, HermiteBasis, PartitionBasis, TruncationIndex,
                            comparison_generator, extract_sign_drift, least_squares, make_basis,
                            solve, solve_comparison, solve_truncated, transfer, truncate_terminal,
                            truncated_generator)


@pytest.fixture(scope="module")
def paths():
    return generate_paths(TimeGrid(1.0, 20), 1, 20_000, seed=3)


@pytest.fixture(scope="module")
def paths_b():
    return generate_paths(TimeGrid(1.0, 20), 1, 20_000, seed=4)


def test_generator_rejects_growth_violation():
    with pytest.raises(DomainError):
        GeneratorSpec(0.1, 0.5, lambda t: 0.0, lambda t, y, z: y)
    with pytest.raises(DomainError):
        GeneratorSpec(-1.0, 0.5, lambda t: 0.0, lambda t, y, z: 0 * y)
    with pytest.raises(DomainError):
        GeneratorSpec(0.0, 0.0, lambda t: 0.0, lambda t, y, z: 0 * y)


def test_generator_rejects_non_lipschitz_claim():
    cusp = make_generator("cusp_z", 0.0, 1.0)
    assert not cusp.lipschitz
    with pytest.raises(DomainError):
        GeneratorSpec(0.0, 1.0, cusp.f0, cusp.driver, lipschitz=True)


def test_hermite_basis_design():
    b = HermiteBasis(2, 2)
    assert b.size == 6
    state = np.random.default_rng(0).standard_normal((1000, 2))
    A = b.design(state, 1.0)
    assert A.shape == (1000, 6)
    assert np.all(A[:, 0] == 1.0)
    assert b.design(state, 0.0).shape == (1000, 1)


def test_partition_basis_design():
    b = PartitionBasis(1, 1, bins=4)
    state = np.array([[-3.0], [-0.1], [0.1], [3.0]])
    A = b.design(state, 1.0)
    assert b.cells == 4 + 2 * 4
    assert A.shape == (4, 2 * b.cells)
    np.testing.assert_array_equal(A[:, 0::2].sum(axis=1), 1.0)
    with pytest.raises(DomainError):
        PartitionBasis(1, 2)
    with pytest.raises(DomainError):
        make_basis("spline", 1, 1)


def test_least_squares_ridge_only_when_needed():
    rng = np.random.default_rng(1)
    A = np.column_stack([np.ones(500), rng.standard_normal(500)])
    coef, cond, ridge = least_squares(A, (3 + 2 * A[:, 1])[:, None])
    np.testing.assert_allclose(coef[:, 0], [3, 2], atol=1e-12)
    assert ridge == 0.0 and cond < 10
    with pytest.raises(ConditioningError):
        least_squares(np.full((10, 2), 1000.0), np.ones((10, 1)))
    _, _, ridge = least_squares(np.column_stack([np.ones(10), np.zeros(10)]), np.ones((10, 1)))
    assert ridge > 0


def test_constant_terminal_is_exact(paths):
    sol = solve(make_generator("zero", 0.0, 0.5), make_terminal("constant", 1.0), paths)
    np.testing.assert_allclose(sol.Y, 1.0, atol=1e-12)
    np.testing.assert_allclose(sol.Z, 0.0, atol=1e-12)


def test_linear_y_oracle(paths):
    sol = solve(make_generator("linear_y", 0.5, 0.5), make_terminal("constant", 1.0), paths)
    assert abs(sol.y0 - math.exp(0.5)) < 1e-3


def test_abs_z_oracle(paths):
    sol = solve(make_generator("abs_z", 0.0, 0.5), make_terminal("W_T"), paths)
    oracle = closed_form_y0("abs_z", "W_T", 0.0, 0.5, "zero", 1.0, 1.0)
    assert oracle == 0.5
    assert abs(sol.y0 - oracle) < 3e-2
    assert math.sqrt(np.mean((sol.Z[:, 1:, 0] - 1.0) ** 2)) < 5e-2
    assert sol.y0_std_error > 0
    np.testing.assert_array_equal(sol.Y[:, -1], paths.W[:, -1, 0])


def test_partition_basis_solve(paths):
    sol = solve(make_generator("abs_z", 0.0, 0.5), make_terminal("W_T"), paths,
                basis="partition", basis_degree=1)
    assert abs(sol.y0 - 0.5) < 3e-2
    assert sol.basis == "partition"


def test_transfer_reproduces_fit(paths, paths_b):
    gen, term = make_generator("linear_y_abs_z", 0.3, 0.5), make_terminal("abs_W_T")
    sol = solve(gen, term, paths)
    again = transfer(sol, gen, term, paths)
    np.testing.assert_allclose(again.Y, sol.Y, atol=1e-10)
    moved = transfer(sol, gen, term, paths_b)
    assert moved.seed == 4
    assert abs(moved.y0 - sol.y0) < 5 * sol.y0_std_error + 1e-2


def test_validation(paths):
    root = make_generator("cusp_z", 0.0, 1.0)
    with pytest.raises(DomainError):
        solve(root, make_terminal("W_T"), paths)
    sol = solve(root, make_terminal("W_T"), paths, allow_nonminimal=True)
    assert np.isfinite(sol.y0)
    with pytest.raises(StepSizeError):
        solve(make_generator("linear_y", 25.0, 0.5), make_terminal("constant"), paths)
    small = generate_paths(TimeGrid(1.0, 4), 1, 30, 1)
    with pytest.raises(DomainError):
        solve(make_generator("zero", 0.0, 0.5), make_terminal("W_T"), small)


def test_truncation_helpers():
    term, f0 = truncate_terminal(make_terminal("W_T"), lambda t: 3.0 - 6.0 * t, TruncationIndex(2, 1))
    W = np.array([[[0.0], [5.0]], [[0.0], [-5.0]], [[0.0], [0.5]]])
    np.testing.assert_array_equal(term.xi(W), [2.0, -1.0, 0.5])
    assert f0(0.0) == 2.0 and f0(1.0) == -1.0 and f0(0.5) == 0.0
    with pytest.raises(DomainError):
        TruncationIndex(0, 1)
    gen = make_generator("abs_z", 0.0, 0.5)
    tg = truncated_generator(gen, TruncationIndex(1, 1))
    y, z = np.zeros(3), np.array([[1.0], [-2.0], [0.0]])
    np.testing.assert_array_equal(tg.driver(0.3, y, z), gen.driver(0.3, y, z))
    cg = comparison_generator(make_generator("affine", 0.2, 0.5), TruncationIndex(1, 1))
    np.testing.assert_allclose(cg.driver(0.0, np.ones(3), z), 0.2 + 0.5 * np.abs(z[:, 0]))


def test_truncated_oracle_and_domination(paths):
    gen, term = make_generator("zero", 0.0, 0.5), make_terminal("W_T")
    idx = TruncationIndex(1, 2)
    sol = solve_truncated(gen, term, idx, paths, basis="partition", basis_degree=2)
    oracle = truncated_gaussian_mean(1.0, 1, 2)
    assert abs(sol.y0 - oracle) < 3 * sol.y0_std_error + 1e-3
    bar = solve_comparison(gen, term, idx, paths, basis="partition", basis_degree=2)
    assert np.max(np.abs(sol.Y) - bar.Y) < 1e-2


def test_truncated_gaussian_mean_limits():
    assert truncated_gaussian_mean(1.0, 1, 1) == pytest.approx(0.0, abs=1e-15)
    assert truncated_gaussian_mean(1.0, 50, 1e-9) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-7)


def test_sign_drift(paths):
    sol = solve(make_generator("abs_z", 0.0, 0.5), make_terminal("W_T"), paths)
    q = extract_sign_drift(sol, 0.5)
    assert set(np.unique(q.values)) <= {-0.5, 0.0, 0.5}
    two = generate_paths(TimeGrid(1.0, 5), 2, 2000, 1)
    gen2 = make_generator("abs_z", 0.0, 0.5, d=2)
    term2 = make_terminal("W_T")
    sol2 = solve(gen2, term2, two, basis_degree=2)
    with pytest.raises(DomainError):
        extract_sign_drift(sol2, 0.5)
    with pytest.warns(UserWarning):
        q2 = extract_sign_drift(sol2, 0.5, extension=True)
    assert np.all(np.linalg.norm(q2.values, axis=-1) <= 0.5 + 1e-12)
