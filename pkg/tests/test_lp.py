from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_lp
from robust_codesign.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, dual_residual, dump_lp,
                                duality_gap, solve_lp, vertex_oracle)

inf = np.inf


def _lp(c, A, lo, up, lb, ub):
    return LpProblem(np.array(c, float), np.array(A, float), lo, up, lb, ub)


def test_textbook_lp():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), value 36
    lp = _lp([-3, -5], [[1, 0], [0, 2], [3, 2]], [-inf] * 3, [4, 12, 18], [0, 0], [inf, inf])
    for method in ("highs", "simplex"):
        s = solve_lp(lp, method=method)
        assert s.status == OPTIMAL
        assert s.objective == pytest.approx(-36)
        assert np.allclose(s.x, [2, 6])
    assert vertex_oracle(lp).objective == pytest.approx(-36)


def test_infeasible_and_unbounded():
    infeasible = _lp([1, 1], [[1, 1]], [5], [inf], [0, 0], [1, 1])
    unbounded = _lp([-1, 0], [[1, -1]], [-inf], [1], [0, 0], [inf, inf])
    for method in ("highs", "simplex"):
        assert solve_lp(infeasible, method=method).status == INFEASIBLE
        assert solve_lp(unbounded, method=method).status == UNBOUNDED
    assert vertex_oracle(infeasible).status == INFEASIBLE
    assert vertex_oracle(unbounded).status == UNBOUNDED


def test_bounds_only_problem():
    lp = LpProblem(np.array([1.0, -2.0]), np.zeros((0, 2)), [], [], [-1, 0], [3, 4])
    for method in ("highs", "simplex"):
        s = solve_lp(lp, method=method)
        assert s.objective == pytest.approx(-9)


def test_random_lps_agree_with_oracle():
    rng = np.random.default_rng(123)
    for _ in range(60):
        lp = random_lp(rng)
        o = vertex_oracle(lp)
        for method in ("highs", "simplex"):
            s = solve_lp(lp, method=method)
            assert s.status == o.status
            if s.status == OPTIMAL:
                assert s.objective == pytest.approx(o.objective, abs=1e-6)
                assert s.residual <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_optimal_solutions_carry_valid_duals(seed):
    lp = random_lp(np.random.default_rng(seed))
    for method in ("highs", "simplex"):
        s = solve_lp(lp, method=method)
        if s.status != OPTIMAL:
            continue
        assert dual_residual(lp, s) <= 1e-7
        assert abs(duality_gap(lp, s)) <= 1e-6 * max(1.0, abs(s.objective))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 3.0, 100.0]))
def test_cost_scaling_scales_objective(seed, lam):
    lp = random_lp(np.random.default_rng(seed))
    a, b = solve_lp(lp), solve_lp(lp.scaled(lam))
    assert a.status == b.status
    if a.status == OPTIMAL:
        assert b.objective == pytest.approx(lam * a.objective, rel=1e-7, abs=1e-7)


def test_problem_validation():
    with pytest.raises(ValueError):
        _lp([1, 1], [[1, 1]], [2], [1], [0, 0], [1, 1])
    with pytest.raises(ValueError):
        _lp([1, 1], [[1, 1, 1]], [0], [1], [0, 0], [1, 1])
    with pytest.raises(ValueError):
        solve_lp(_lp([1], [[1]], [0], [1], [0], [1]), method="nope")


def test_dump_is_deterministic(tmp_path):
    lp = random_lp(np.random.default_rng(1))
    dump_lp(lp, tmp_path / "a.txt")
    dump_lp(lp, tmp_path / "b.txt")
    text = (tmp_path / "a.txt").read_text()
    assert text == (tmp_path / "b.txt").read_text()
    assert text.startswith(f"VARS {lp.n_vars}\nROWS {lp.n_rows}\n")
