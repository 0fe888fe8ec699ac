import math

import numpy as np
import pytest

from psibsde.errors import DomainError, HypothesisError
from psibsde.estimates import StoppingFamily, default_family
from psibsde.instances import make_generator, make_terminal
from psibsde.kernel import TimeGrid, generate_paths
from psibsde.solver import solve, transfer
from psibsde.uniqueness import (corrupt_pair, delta_representation_margin, integrability_check,
                                linearize, two_solver_agreement, uniform_integrability_margin,
                                window_schedule)


@pytest.fixture(scope="module")
def pair():
    grid = TimeGrid(1.0, 20)
    p1 = generate_paths(grid, 1, 20_000, seed=31)
    p2 = generate_paths(grid, 1, 20_000, seed=32)
    gen, term = make_generator("sin_y_abs_z", 0.5, 1.0), make_terminal("abs_W_T")
    s1 = solve(gen, term, p1)
    s2 = transfer(solve(gen, term, p2), gen, term, p1)
    return p1, p2, gen, term, s1, s2


def test_linearization_is_exact_and_bounded(pair):
    _, _, gen, _, s1, s2 = pair
    lin = linearize(gen, s1, s2)
    excess, residual = lin.check(gen, s1, s2)
    assert excess <= 1e-12
    assert residual <= 1e-12


def test_delta_margin_and_negative_control(pair):
    p1, _, gen, _, s1, s2 = pair
    lin = linearize(gen, s1, s2)
    fam = default_family(np.abs(s1.Y) + np.abs(s2.Y))
    rep = delta_representation_margin(s1, s2, lin, fam, gen.beta, p1, start_step=10)
    assert not rep.failed
    bad = corrupt_pair(s1, 0.5)
    rep_bad = delta_representation_margin(bad, s1, linearize(gen, bad, s1), fam, gen.beta, p1, 10)
    assert rep_bad.failed


def test_window_schedule_cover():
    ws = window_schedule(1.0, 1.0, 1.0)
    assert ws.window_length == 0.25
    assert len(ws.intervals) == 4 and ws.covers(1.0)
    ws = window_schedule(0.7, 0.9, 2.3)
    assert ws.covers(2.3)
    assert ws.intervals[0][1] == 2.3
    with pytest.raises(DomainError):
        window_schedule(0.0, 1.0, 1.0)


def test_ui_attained_case():
    grid = TimeGrid(1.0, 100)
    p = generate_paths(grid, 1, 50_000, seed=41)
    gen = make_generator("affine", 0.0, 1.0)
    term = make_terminal("W_T")
    s1 = solve(gen, term, p)
    s2 = corrupt_pair(s1, 0.0)
    s2.Y[:, :] = s2.Y + 1.0
    s2.Z[:, :, :] = s2.Z + 1.0
    lin = linearize(gen, s1, s2)
    np.testing.assert_allclose(np.abs(lin.v), 1.0, rtol=1e-12)
    fam = StoppingFamily.deterministic(p.M, [100])
    rep = uniform_integrability_margin(s1, s2, lin, fam, 1.0, p, start_step=75)
    assert rep.ok
    assert rep.rows[0].second_moment_bound == pytest.approx(math.sqrt(2.0))
    with pytest.raises(HypothesisError):
        uniform_integrability_margin(s1, s2, lin, fam, 1.0, p, start_step=50)


def test_integrability_check(pair):
    p1, _, gen, term, _, _ = pair
    ok, note = integrability_check(gen, term, p1, mu=2.1)
    assert ok, note
    ok, _ = integrability_check(gen, term, p1, mu=0.5)
    assert not ok


def test_two_solver_agreement(pair):
    p1, p2, gen, term, _, _ = pair
    rep = two_solver_agreement(gen, term, p1, p2, mu=2.1, degrees=(4, 5))
    assert rep.passed, (rep.delta_seed, rep.delta_degree, rep.combined_se)
    assert rep.sup_by_step.shape == (21,)
