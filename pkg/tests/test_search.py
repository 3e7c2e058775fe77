from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_codesign.search import (EXPECTATION, WORST_CASE, Dim, Lattice, RiskMeasure, best_of,
                                    exhaustive, pattern_search, risk, save_trace)


class Counting:
    def __init__(self, f):
        self.f = f
        self.seen = []

    def __call__(self, x):
        self.seen.append(tuple(x))
        return self.f(x)


def test_lattice_basics():
    lat = Lattice((Dim(0, 60, 5), Dim(0, 53, 1)))
    assert lat.shape == (13, 54) and lat.size == 702
    assert lat.point((2, 3)) == (10, 3)
    assert lat.contains((12, 53)) and not lat.contains((13, 0))
    assert lat.clip((-4, 99)) == (0, 53)
    assert list(Lattice.integer([(0, 1), (0, 1)]).indices()) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    with pytest.raises(ValueError):
        Dim(0, 1, 0)
    with pytest.raises(ValueError):
        Dim(3, 1, 1)


def test_risk_measures():
    assert risk([1.0, 2.0, 6.0]) == 3.0
    assert risk([1.0, 2.0, 6.0], WORST_CASE) == 6.0
    assert RiskMeasure.parse("max") == WORST_CASE
    assert RiskMeasure.parse("mean") == EXPECTATION
    with pytest.raises(ValueError):
        RiskMeasure.parse("cvar")
    with pytest.raises(ValueError):
        risk([])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pattern_matches_exhaustive_on_quadratics(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    shape = [int(rng.integers(1, 25)) for _ in range(d)]
    lat = Lattice.integer([(0, n - 1) for n in shape])
    c = rng.uniform(0, np.array(shape) - 1)
    w = rng.uniform(0.2, 3, d)

    def f(x):
        return float((w * (np.asarray(x) - c) ** 2).sum())

    a, b = pattern_search(f, lat), exhaustive(f, lat)
    assert a.index == b.index and a.value == b.value


def test_pattern_handles_step_objective_and_ties():
    lat = Lattice.integer([(0, 30), (0, 30)])

    def f(x):
        return math.floor(abs(x[0] - 17) / 3) + math.floor(abs(x[1] - 4) / 3)

    a, b = pattern_search(f, lat), exhaustive(f, lat)
    assert a.value == b.value == 0
    # exhaustive returns the lexicographically first minimiser
    assert b.index == (15, 2)


def test_infeasible_points_and_failures():
    lat = Lattice.integer([(0, 10), (0, 10)])

    def f(x):
        if x[0] + x[1] > 14:
            raise RuntimeError("solver failed")
        if x[0] < 2:
            return math.inf
        return (x[0] - 9) ** 2 + (x[1] - 5) ** 2

    a = pattern_search(f, lat)
    assert a.point == (9, 5)
    assert all("solver failed" in v for v in a.failures.values())
    e = exhaustive(f, lat)
    assert e.point == (9, 5) and len(e.failures) == 21


def test_cache_and_budget():
    lat = Lattice.integer([(0, 40), (0, 40)])
    f = Counting(lambda x: (x[0] - 33) ** 2 + (x[1] - 7) ** 2)
    a = pattern_search(f, lat)
    assert len(f.seen) == len(set(f.seen)) == a.n_evals
    g = Counting(f.f)
    b = pattern_search(g, lat, budget=10)
    assert b.n_evals == 10 == len(g.seen)
    assert len(b.trace) == 10
    assert [r.incumbent for r in b.trace] == sorted([r.incumbent for r in b.trace], reverse=True)


def test_parallel_map_gives_same_result():
    lat = Lattice.integer([(0, 20), (0, 20), (0, 5)])

    def f(x):
        return abs(x[0] - 13) + 2 * abs(x[1] - 3) + 0.5 * x[2]

    serial = pattern_search(f, lat)
    mapped = pattern_search(f, lat, map_fn=lambda fn, xs: [fn(x) for x in reversed(list(xs))][::-1])
    assert serial.index == mapped.index and serial.n_evals == mapped.n_evals


def test_start_and_cap_validation():
    lat = Lattice.integer([(0, 3)])
    with pytest.raises(ValueError):
        pattern_search(lambda x: 0.0, lat, start=(7,))
    with pytest.raises(ValueError):
        pattern_search(lambda x: 0.0, lat, budget=0)
    with pytest.raises(ValueError):
        exhaustive(lambda x: 0.0, Lattice.integer([(0, 999), (0, 999)]), cap=1000)


def test_nan_becomes_infeasible():
    lat = Lattice.integer([(0, 3)])
    r = exhaustive(lambda x: float("nan") if x[0] == 0 else x[0], lat)
    assert r.point == (1,) and r.failures == {(0,): "NaN objective"}


def test_best_of_and_trace(tmp_path):
    assert best_of({(1, 0): 2.0, (0, 5): 2.0, (3, 3): 4.0}) == ((0, 5), 2.0)
    r = exhaustive(lambda x: x[0], Lattice.integer([(0, 2)]))
    save_trace(r, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "eval,x0,value,incumbent" and len(lines) == 4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=8, max_size=8), st.lists(st.floats(0, 0.4), min_size=8, max_size=8))
def test_bisect_step_finds_isolated_threshold(thresholds, fracs):
    lat = Lattice.integer([(1, 2), (1, 4), (1, 20)])
    level = 21.0

    def f(pt):
        line = (int(pt[0]) - 1) * 4 + int(pt[1]) - 1
        j = int(pt[2]) - 1
        if j >= thresholds[line]:
            return pt[2] - fracs[line]
        return level + (thresholds[line] - j) / 10

    ex = exhaustive(f, lat)
    ps = pattern_search(f, lat, start=(0, 0, 19), bisect=(2, level))
    assert ps.value == ex.value and ps.index == ex.index
