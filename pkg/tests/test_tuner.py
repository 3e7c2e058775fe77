from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_codesign.empc import ControllerParams, Model, SizingParams, closed_loop
from robust_codesign.thermal import SystemState
from robust_codesign.tuner import (TableObjective, TuningPoint, aggregate, dominance_audit, dominates,
                                   enumerate_pc, j2, j2_distance, j3, lattice_cap, pareto_front,
                                   penalised_table, penalised_value, reference_run, select, tune,
                                   tuning_lattice, tuning_search)


def test_j3_values():
    assert j3(ControllerParams(1, 1, 24)) == pytest.approx(23.5)
    assert j3(ControllerParams(1, 3, 24)) == pytest.approx(24 - 1 / 12 - 1 / 12)
    assert j3(ControllerParams(3, 1, 24)) == pytest.approx(24 - 0.25 - 1 / 12)


def test_lattice_enumeration():
    assert lattice_cap(15, 5) == 3
    pcs = enumerate_pc(15, 5, (1, 24))
    pairs = sorted({(p.n_s, p.n_x) for p in pcs})
    assert pairs == [(1, 1), (1, 2), (1, 3), (2, 1), (3, 1)]
    assert len(pcs) == 5 * 24
    assert pcs == sorted(pcs, key=lambda p: p.key)
    assert len(enumerate_pc(60, 15, (1, 24))) == 8 * 24
    with pytest.raises(ValueError):
        lattice_cap(15, 4)


def test_aggregate_and_j2_distance():
    V = np.arange(8.0)
    assert aggregate(V, Fraction(15), Fraction(30)).tolist() == [1, 5, 9, 13]
    with pytest.raises(ValueError):
        aggregate(V, Fraction(15), Fraction(20))
    # 20 min and 30 min costs compared on their 60 min common grid
    a = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
    b = np.array([1.5, 1.5, 3.0, 4.0])
    assert j2_distance(a, Fraction(20), b, Fraction(30)) == pytest.approx(0 + 1)
    assert j2_distance(b, Fraction(30), b, Fraction(30)) == 0.0


@settings(max_examples=80)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=25))
def test_pareto_front_matches_brute_force(pts):
    pts = [(float(a), float(b)) for a, b in pts]
    front = pareto_front(pts)
    assert front.audit()
    kept = {(a, b) for a, b, _, _ in front.points}
    undominated = {p for p in pts if not any(dominates(q, p) for q in pts)}
    assert kept == undominated
    for a, b, i, _ in front.points:
        assert i == pts.index((a, b))


def test_dominance_audit_detects_violations():
    assert dominance_audit([(1, 3), (2, 2), (3, 1)])
    assert not dominance_audit([(1, 3), (1, 3)])
    assert not dominance_audit([(1, 3), (2, 3)])


def test_penalised_value_and_select():
    a = ControllerParams(1, 1, 2)
    b = ControllerParams(1, 3, 6)
    assert penalised_value(a, 0.5, 1.0, 24) == j3(a)
    assert penalised_value(a, 2.0, 1.0, 24) == 27.0
    assert penalised_value(a, math.inf, 1.0, 24) == math.inf
    pts = [TuningPoint(a, 2.0, j3(a)), TuningPoint(b, 0.2, j3(b))]
    assert select(pts, 1.0) == (b, False)
    with pytest.warns(UserWarning, match="most accurate"):
        assert select(pts, 0.1) == (b, True)
    table = penalised_table(pts, 1.0, 24)
    assert TableObjective(table)((1, 3, 6)) == j3(b)
    assert TableObjective(table)((2, 2, 2)) == math.inf


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_pattern_search_on_penalised_tables(seed, eps):
    """Synthetic accuracy that improves with finer steps and longer horizons."""
    rng = np.random.default_rng(seed)
    pc_ref = ControllerParams(1, 4, 24, delta_T=60, T_d_min=15)
    lat = tuning_lattice(pc_ref, (1, 24))
    pcs = enumerate_pc(60, 15, (1, 24))
    scale = rng.uniform(0.5, 5)
    pts = []
    for pc in pcs:
        err = scale * (1.0 / pc.n_f + 0.1 * pc.n_s / pc.n_x)
        pts.append(TuningPoint(pc, err, j3(pc)))
    table = penalised_table(pts, eps, 24)
    obj = TableObjective(table)
    best = min(table, key=lambda k: (table[k], k))
    res = tuning_search(obj, lat, 24)
    assert tuple(int(v) for v in res.point) == best


HOURLY = dict(delta_T=60, T_d_min=30)


def test_reference_run_picks_costliest(two_days):
    pc_ref = ControllerParams(1, 2, 4, **HOURLY)
    x0s = [SystemState(19.0, 0.0), SystemState(25.0, 4.0)]
    ref = reference_run(two_days, SizingParams(4, 10), pc_ref, x0s, 12)
    assert ref.totals[ref.index] == max(ref.totals)
    assert ref.V.shape == (24,)
    assert j2(SizingParams(4, 10), pc_ref, ref, two_days, 12) == 0.0
    with pytest.raises(ValueError, match="twice"):
        reference_run(two_days, SizingParams(0, 0), pc_ref, x0s, 6)


def test_tune_small_lattice(two_days):
    pc_ref = ControllerParams(1, 2, 6, **HOURLY)
    kw = dict(windows=[two_days], p_samples=[SizingParams(0, 0), SizingParams(6, 20)], pc_ref=pc_ref,
              epsilon=0.3, span_hours=12, n_f_range=(2, 5))
    ex = tune(method="exhaustive", **kw)
    pt = tune(method="pattern", **kw)
    assert len(ex.points) == 3 * 4 and ex.n_evals == 12
    assert ex.pc_star == pt.pc_star
    for f in ex.fronts + pt.fronts:
        assert f.audit()
    ref_point = next(q for q in ex.points if q.pc.key == (1, 2, 5))
    assert all(v >= 0 for v in ref_point.per_p)
    # the reported j2 is the max over sizing samples
    assert all(q.j2 == max(q.per_p) for q in ex.points)
    # independent recomputation of one entry
    q = ex.points[0]
    r = closed_loop(ex.references[0][1].x_worst, two_days, SizingParams(6, 20), q.pc, 12, Model())
    assert q.per_p[1] == j2_distance(r.V_cl, q.pc.T_s, ex.references[0][1].V, pc_ref.T_s)


def test_tune_validation(two_days):
    pc_ref = ControllerParams(1, 2, 6, **HOURLY)
    with pytest.raises(ValueError):
        tune([two_days], [], pc_ref, 0.1, 12, (1, 2))
    with pytest.raises(ValueError):
        tune([two_days], [SizingParams(0, 0)], pc_ref, -1, 12, (1, 2))
