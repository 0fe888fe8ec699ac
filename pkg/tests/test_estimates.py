import math

import numpy as np
import pytest

from psibsde.errors import DomainError, HypothesisError
from psibsde.estimates import (StoppingFamily, apriori_bound_check, class_D_diagnostic,
                               default_family, proof_constant)
from psibsde.instances import make_generator, make_terminal
from psibsde.kernel import TimeGrid, generate_paths
from psibsde.psi import default_split
from psibsde.solver import solve


@pytest.fixture(scope="module")
def setup():
    paths = generate_paths(TimeGrid(1.0, 20), 1, 20_000, seed=21)
    gen, term = make_generator("linear_y_abs_z", 0.3, 0.5, "constant", 0.2), make_terminal("W_T")
    return paths, gen, term, solve(gen, term, paths)


def test_hitting_times_are_first_hits():
    proc = np.array([[0.0, 0.4, 1.2, 0.1], [0.0, 0.1, 0.2, 0.3]])
    fam = StoppingFamily.hitting_times(proc, levels=(1.0,))
    np.testing.assert_array_equal(fam.indices["hit>=1"], [2, 3])
    det = StoppingFamily.deterministic(2, [0, 3])
    both = fam.union(det)
    assert both.labels == ["hit>=1", "t_step=0", "t_step=3"]
    both.validate(2, 3)
    with pytest.raises(DomainError):
        both.validate(2, 2)


def test_default_family_has_all_grid_times():
    proc = np.abs(np.random.default_rng(0).standard_normal((50, 11)))
    fam = default_family(proc, levels=(0.5, 1.0))
    assert len(fam.labels) == 2 + 11


def test_bound_has_no_violations(setup):
    paths, gen, term, sol = setup
    rep = apriori_bound_check(sol, gen, term, 2 * 0.5, paths)
    assert rep.violation_count == 0
    assert np.all(rep.min_margin > 0)
    assert len(list(rep.rows())) == 21


def test_bound_needs_supercritical_mu(setup):
    paths, gen, term, sol = setup
    with pytest.raises(HypothesisError):
        apriori_bound_check(sol, gen, term, 0.5, paths)


def test_bound_flags_inflated_solution(setup):
    paths, gen, term, sol = setup
    fake = solve(gen, make_terminal("constant", 0.0), paths)
    fake.Y[:, :] = 1e6
    rep = apriori_bound_check(fake, gen, term, 1.0, paths)
    assert rep.violation_count > 0


def test_class_d_against_constant(setup):
    paths, gen, term, sol = setup
    mu = 1.0
    split = default_split(mu, gen.gamma, 1.0)
    fam = default_family(np.abs(sol.Y))
    rep = class_D_diagnostic(sol, split.a, fam)
    const, se = proof_constant(gen, term, paths, mu, split)
    assert rep.sup_estimate <= const + 3 * se
    assert rep.argmax in rep.values
    assert all(v >= 0 for v in rep.std_errors.values())
    with pytest.raises(DomainError):
        class_D_diagnostic(sol, 0.0, fam)


def test_proof_constant_without_intercept_matches_formula():
    paths = generate_paths(TimeGrid(1.0, 4), 1, 1000, seed=2)
    gen, term = make_generator("zero", 0.0, 0.5), make_terminal("constant", 1.0)
    split = default_split(1.0, 0.5, 1.0)
    value, se = proof_constant(gen, term, paths, 1.0, split)
    from psibsde.psi import psi
    a, b, c = split.a, split.b, split.c
    expected = psi(1.0, a) * (1 / math.sqrt(1 - 0.25 / b**2)
                              + math.exp(2 * b * b + a * b * b / c) * psi(1.0, 1.0))
    assert value == pytest.approx(expected, rel=1e-12)
    assert se < 1e-12
