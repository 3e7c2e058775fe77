from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_codesign.economics import EconomicsSpec
from robust_codesign.empc import ControllerParams, Model, SizingParams, closed_loop
from robust_codesign.search import EXPECTATION, WORST_CASE
from robust_codesign.subsampler import (ImportancePoint, OperationStore, importance_all, importance_solve,
                                        scale_points, scenario_case, select_representatives, sizing_lattice,
                                        to_sizing, weighted_objective)
from robust_codesign.thermal import SystemState
from robust_codesign.timeseries import SynthConfig, split_subsamples, synthesize

PC = ControllerParams(1, 1, 4, delta_T=60, T_d_min=30)
ECON = EconomicsSpec()
LAT = sizing_lattice((0, 10, 5), (0, 20, 10))


@pytest.fixture(scope="module")
def store():
    s = synthesize(SynthConfig(span_hours=4 * 24 + 5, start_doy=60, price_block=60), 21, name="train")
    subs = split_subsamples(s, 24, horizon_hours=5)
    return OperationStore.from_subsamples(s, subs, PC, SystemState(19.0, 0.0), Model())


def test_sizing_lattice_units():
    lat = sizing_lattice()
    assert lat.shape == (61, 54)
    assert to_sizing(lat.point((13, 53))) == SizingParams(13, 53)


def test_store_memo_and_annualisation(store):
    p = SizingParams(5, 10)
    case = store.cases[1]
    direct = closed_loop(SystemState(19.0, 0.0), case.sub.data(case.parent), p, PC, 24, Model()).total_cost
    assert store.operation(1, p) == direct
    assert store.annualised(1, p) == pytest.approx(365 * direct)
    n = len(store.table)
    store.operation(1, p)
    assert len(store.table) == n
    assert store.subset([1]).table is store.table
    assert store.fork().table == {}


def test_failed_operation_is_infinite(store):
    assert store.operation(0, SizingParams(99, 0)) == math.inf


def test_importance_pattern_matches_exhaustive(store):
    for h in range(len(store)):
        a = importance_solve(store, h, LAT, ECON, "pattern")
        b = importance_solve(store, h, LAT, ECON, "exhaustive")
        assert (a.p_star, a.V_star) == (b.p_star, b.V_star)
        assert a.V_star == store.annualised(h, a.p_star) + ECON.investment(a.p_star)


def test_importance_all_fills_memo(store):
    pts = importance_all(store.fork(), LAT, ECON, "exhaustive")
    assert [q.subsample_id for q in pts] == list(range(len(store)))
    again = importance_all(store.fork(), LAT, ECON, "exhaustive", map_fn=lambda f, xs: list(map(f, xs)))
    assert pts == again


def _points(costs, sizes):
    return [ImportancePoint(i, SizingParams(*s), c, SystemState(19, 0)) for i, (c, s) in enumerate(zip(costs, sizes))]


def test_scaling():
    pts = _points([100.0, 300.0, 200.0], [(0, 0), (10, 5), (5, 0)])
    X, spec = scale_points(pts)
    assert X[:, 0].tolist() == [-60.0, 60.0, 0.0]
    assert X[1, 1:].tolist() == [10.0, 8.4]
    assert np.allclose(spec.inverse(X[:, 0]), [100, 300, 200])
    raw, off = scale_points(pts, enabled=False)
    assert raw[:, 0].tolist() == [100.0, 300.0, 200.0] and not off.applied
    with pytest.warns(UserWarning, match="equal"):
        flat, _ = scale_points(_points([5.0, 5.0], [(0, 0), (1, 0)]))
    assert flat[:, 0].tolist() == [0.0, 0.0]


def test_select_representatives():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(c, 0.5, size=(10, 3)) for c in (-40, 0, 40)])
    cm = select_representatives(X, k_max=10, d_max=5.0, seed=1)
    assert cm.n_c == 3 and sorted(cm.weights) == [10, 10, 10]
    cm.check()
    assert cm.representative_ids == sorted(cm.representative_ids)
    assert [k for k, _ in cm.k_history] == [2, 3]
    assert all(np.array_equal(X[r], med) for r, med in zip(cm.representative_ids, cm.medoids))
    capped = select_representatives(X, k_max=2, d_max=0.1, seed=1)
    assert capped.n_c == 2
    fixed = select_representatives(X, n_c=5, seed=1)
    assert fixed.n_c == 5 and sum(fixed.weights) == 30
    aug = fixed.augmented([fixed.representative_ids[0], 29 if 29 not in fixed.representative_ids else 28])
    assert aug.n_c == 6 and aug.m == 31
    with pytest.raises(ValueError):
        select_representatives(X, n_c=31)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=60))
def test_weighted_objective_identity(values):
    m = len(values)
    total = 0.0
    for v in values:
        total += v
    assert weighted_objective(values, [1] * m, m) == total / m
    assert weighted_objective(values, [1] * m, m, WORST_CASE) == max(values)


def test_weighted_objective_weights():
    assert weighted_objective([10.0, 40.0], [3, 1], 4, EXPECTATION) == 17.5


def test_scenario_case():
    s = synthesize(SynthConfig(span_hours=30), 0)
    case = scenario_case(s, 24)
    assert case.weight == 365 and case.sub.n_sim == 96 and case.sub.n_pad == 24
    with pytest.raises(ValueError):
        scenario_case(s, 48)
