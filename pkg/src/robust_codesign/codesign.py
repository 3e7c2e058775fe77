"""Sizing under scenario uncertainty with a fixed controller, plus the full co-design loop.

``solve_pcd`` minimises the clustered objective over the sizing lattice,
``solve_full`` the scenario objective without decomposition. Costs are in
GBP per year: annualised operation plus annualised investment.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Sequence

from .constants import HOURS_PER_YEAR
from .economics import EconomicsSpec, annuity, investment
from .empc import ControllerParams, Model, SizingParams, closed_loop
from .search import EXPECTATION, Lattice, RiskMeasure, exhaustive, pattern_search
from .subsampler import (ClusterModel, OperationStore, importance_solve, to_sizing,
                         weighted_objective)
from .thermal import SystemState
from .timeseries import ExogenousSeries

__all__ = ["annuity", "investment", "EconomicsSpec", "DesignReport", "solve_pcd", "solve_full",
           "cross_evaluate", "effective_cost", "continuous_cost", "validate", "ValidationReport"]


@dataclass
class DesignReport:
    p_star: SizingParams
    estimated: float  # objective at p_star, GBP/yr
    effective: float | None = None
    effective_label: str = "none"  # training | heldout | none
    per_case: list[float] = field(default_factory=list)  # annualised cost of each case at p_star
    wall_time: float = 0.0
    n_evals: int = 0
    provenance: dict = field(default_factory=dict)


@dataclass
class _Objective:
    """Risk over weighted cases plus investment; picklable for parallel lattice sweeps."""

    store: OperationStore
    ids: list[int]
    weights: list[float]
    m: int
    measure: RiskMeasure
    econ: EconomicsSpec

    def __call__(self, point) -> float:
        p = to_sizing(point)
        vals = [self.store.annualised(h, p) for h in self.ids]
        return weighted_objective(vals, self.weights, self.m, self.measure) + self.econ.investment(p)


def _minimise(obj, lattice: Lattice, method: str, map_fn):
    if method == "exhaustive":
        return exhaustive(obj, lattice, map_fn=map_fn)
    if method == "pattern":
        return pattern_search(obj, lattice, start=(0, 0), map_fn=map_fn)
    raise ValueError(f"unknown search method {method!r}")


def solve_pcd(clusters: ClusterModel, store: OperationStore, lattice: Lattice, econ: EconomicsSpec,
              measure: RiskMeasure = EXPECTATION, method: str = "exhaustive", map_fn=None) -> DesignReport:
    """Minimise the representatives' weighted risk plus investment over the sizing lattice."""
    for h in clusters.representative_ids:
        if not 0 <= h < len(store):
            raise KeyError(f"representative {h} has no data")
    t0 = time.perf_counter()
    obj = _Objective(store, list(clusters.representative_ids), list(clusters.weights), clusters.m,
                     measure, econ)
    res = _minimise(obj, lattice, method, map_fn)
    p = to_sizing(res.point)
    per = [store.annualised(h, p) + econ.investment(p) for h in clusters.representative_ids]
    return DesignReport(p_star=p, estimated=res.value, per_case=per,
                        wall_time=time.perf_counter() - t0, n_evals=res.n_evals,
                        provenance={"n_c": clusters.n_c, "m": clusters.m, "pc": store.pc.key,
                                    "representatives": list(clusters.representative_ids)})


def solve_full(store: OperationStore, lattice: Lattice, econ: EconomicsSpec,
               measure: RiskMeasure = EXPECTATION, method: str = "exhaustive", map_fn=None,
               ids: Sequence[int] | None = None) -> DesignReport:
    """Risk over every case (or ``ids``) with unit weights; one case gives a deterministic design."""
    ids = list(range(len(store))) if ids is None else list(ids)
    if not ids:
        raise ValueError("no scenarios")
    t0 = time.perf_counter()
    obj = _Objective(store, ids, [1.0] * len(ids), len(ids), measure, econ)
    res = _minimise(obj, lattice, method, map_fn)
    p = to_sizing(res.point)
    per = [store.annualised(h, p) + econ.investment(p) for h in ids]
    return DesignReport(p_star=p, estimated=res.value, effective=res.value, effective_label="training",
                        per_case=per, wall_time=time.perf_counter() - t0, n_evals=res.n_evals,
                        provenance={"cases": ids, "pc": store.pc.key})


def cross_evaluate(p: SizingParams, store: OperationStore, econ: EconomicsSpec,
                   ids: Sequence[int] | None = None) -> tuple[float, list[float]]:
    """Mean annualised cost of a fixed design over the cases, and the per-case costs."""
    ids = list(range(len(store))) if ids is None else list(ids)
    per = [store.annualised(h, p) + econ.investment(p) for h in ids]
    return weighted_objective(per, [1.0] * len(per), len(per)), per


def effective_cost(p: SizingParams, store: OperationStore, econ: EconomicsSpec,
                   measure: RiskMeasure = EXPECTATION) -> float:
    """Decomposed objective at ``p`` with every case its own representative."""
    vals = [store.annualised(h, p) for h in range(len(store))]
    return weighted_objective(vals, [1.0] * len(vals), len(vals), measure) + econ.investment(p)


def continuous_cost(p: SizingParams, series: ExogenousSeries, pc: ControllerParams, span_hours: float,
                    econ: EconomicsSpec, model: Model, x0: SystemState | None = None) -> float:
    """One uninterrupted closed loop over ``span_hours``, annualised."""
    r = closed_loop(x0 or model.initial_state(), series, p, pc, span_hours, model)
    return HOURS_PER_YEAR / span_hours * r.total_cost + econ.investment(p)


@dataclass
class ValidationRow:
    case: int
    cost_at_p: float
    local_p: SizingParams
    local_cost: float

    @property
    def regret(self) -> float:
        return self.cost_at_p - self.local_cost


@dataclass
class ValidationReport:
    p: SizingParams
    threshold: float
    rows: list[ValidationRow]

    @property
    def flagged(self) -> list[int]:
        return [r.case for r in self.rows if r.regret > self.threshold]


def validate(p_star: SizingParams, heldout: OperationStore, lattice: Lattice, econ: EconomicsSpec,
             threshold: float, method: str = "pattern") -> ValidationReport:
    """Regret of ``p_star`` on each held-out case against that case's own optimal design."""
    rows = []
    for h in range(len(heldout)):
        local = importance_solve(heldout, h, lattice, econ, method)
        at_p = heldout.annualised(h, p_star) + econ.investment(p_star)
        # the lattice optimum can only be beaten by p_star if the local search missed it
        if at_p < local.V_star:
            local_p, local_cost = p_star, at_p
        else:
            local_p, local_cost = local.p_star, local.V_star
        rows.append(ValidationRow(h, at_p, local_p, local_cost))
    return ValidationReport(p_star, threshold, rows)


def save_design(reports: Sequence[tuple[str, DesignReport]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "battery_units", "pv_units", "battery_kwh", "pv_m2", "estimated",
                    "effective", "effective_on", "n_evals"])
        for label, r in reports:
            w.writerow([label, r.p_star.battery_units, r.p_star.pv_units, repr(r.p_star.battery_kwh),
                        repr(r.p_star.pv_m2), repr(r.estimated),
                        "" if r.effective is None else repr(r.effective), r.effective_label, r.n_evals])


def save_validation(report: ValidationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "cost_at_p", "local_battery_units", "local_pv_units", "local_cost", "regret",
                    "flagged"])
        for r in report.rows:
            w.writerow([r.case, repr(r.cost_at_p), r.local_p.battery_units, r.local_p.pv_units,
                        repr(r.local_cost), repr(r.regret), int(r.regret > report.threshold)])

