"""Importance subsampling: score every subsample by its own optimal design and cluster the scores.

Each subsample ``h`` is reduced to the point ``(V*_h, S^B*_h, S^PV*_h)``
where ``V*_h`` minimises annualised operation plus investment over the
sizing lattice. Points are scaled and grouped with k-medoids; each
medoid subsample represents its cluster with weight ``nu_i = |G_i|``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clusterer import distance_matrix, kmedoids
from .empc import ClosedLoopError, ControllerParams, Model, SizingParams, closed_loop
from .economics import EconomicsSpec
from .search import EXPECTATION, Dim, Lattice, RiskMeasure, exhaustive, pattern_search
from .thermal import SystemState
from .constants import HOURS_PER_YEAR
from .timeseries import ExogenousSeries, Subsample

log = logging.getLogger(__name__)


def sizing_lattice(battery: tuple[int, int, int] = (0, 60, 1), pv: tuple[int, int, int] = (0, 53, 1)) -> Lattice:
    """Lattice over (battery units, PV units), each axis given as (lower, upper, step)."""
    return Lattice((Dim(*battery), Dim(*pv)))


def to_sizing(point) -> SizingParams:
    return SizingParams(int(round(point[0])), int(round(point[1])))


@dataclass(frozen=True)
class Case:
    """One simulation case: a subsample of a parent series."""

    parent: ExogenousSeries
    sub: Subsample

    @property
    def key(self) -> tuple:
        return (self.sub.parent_id, self.sub.start_index, self.sub.n_sim, self.sub.n_pad)

    @property
    def weight(self) -> float:
        return self.sub.weight


def scenario_case(series: ExogenousSeries, span_hours: float) -> Case:
    """Whole-series case simulated over ``span_hours``, annualised by ``8760 / span``."""
    n_sim = int(round(span_hours * 60.0 / series.resolution))
    if n_sim > len(series):
        raise ValueError("span longer than the scenario")
    sub = Subsample(series.name, 0, n_sim, len(series) - n_sim, HOURS_PER_YEAR / span_hours,
                    series.resolution)
    return Case(series, sub)


@dataclass
class OperationStore:
    """Memo of operational costs ``sum(V_cl)`` per (case, p) for one controller and initial state.

    Stores created by :meth:`subset` or :meth:`extended` share the memo.
    """

    cases: list[Case]
    pc: ControllerParams
    x_hat: SystemState
    model: Model
    table: dict = field(default_factory=dict)

    @classmethod
    def from_subsamples(cls, parent: ExogenousSeries, subs: Sequence[Subsample], pc, x_hat, model):
        return cls([Case(parent, s) for s in subs], pc, x_hat, model)

    def __len__(self) -> int:
        return len(self.cases)

    def operation(self, h: int, p: SizingParams) -> float:
        case = self.cases[h]
        key = (case.key, p)
        if key not in self.table:
            try:
                r = closed_loop(self.x_hat, case.sub.data(case.parent), p, self.pc,
                                case.sub.sim_hours, self.model)
                self.table[key] = r.total_cost
            except (ClosedLoopError, ValueError) as exc:
                log.warning("case %d at %s failed: %s", h, p, exc)
                self.table[key] = math.inf
        return self.table[key]

    def annualised(self, h: int, p: SizingParams) -> float:
        return self.cases[h].weight * self.operation(h, p)

    def fork(self) -> OperationStore:
        """Same cases with an empty memo."""
        return OperationStore(list(self.cases), self.pc, self.x_hat, self.model)

    def subset(self, ids: Sequence[int]) -> OperationStore:
        return OperationStore([self.cases[i] for i in ids], self.pc, self.x_hat, self.model, self.table)

    def extended(self, cases: Sequence[Case]) -> OperationStore:
        return OperationStore(list(self.cases) + list(cases), self.pc, self.x_hat, self.model, self.table)


@dataclass(frozen=True)
class ImportancePoint:
    subsample_id: int
    p_star: SizingParams
    V_star: float
    x_hat: SystemState

    @property
    def coords(self) -> tuple[float, float, float]:
        return (self.V_star, self.p_star.battery_kwh, self.p_star.pv_m2)


@dataclass
class _SubsampleObjective:
    store: OperationStore
    h: int
    econ: EconomicsSpec

    def __call__(self, point) -> float:
        p = to_sizing(point)
        return self.store.annualised(self.h, p) + self.econ.investment(p)


def importance_solve(store: OperationStore, h: int, lattice: Lattice, econ: EconomicsSpec,
                     method: str = "pattern") -> ImportancePoint:
    """Minimise ``R_h * sum(V_cl) + V_I(p)`` over the sizing lattice for subsample ``h``."""
    obj = _SubsampleObjective(store, h, econ)
    if method == "pattern":
        res = pattern_search(obj, lattice, start=(0, 0))
    elif method == "exhaustive":
        res = exhaustive(obj, lattice)
    else:
        raise ValueError(f"unknown search method {method!r}")
    if not math.isfinite(res.value):
        raise RuntimeError(f"every sizing failed on subsample {h}")
    return ImportancePoint(h, to_sizing(res.point), res.value, store.x_hat)


@dataclass(frozen=True)
class ScalingSpec:
    cost_lo: float
    cost_hi: float
    target: tuple[float, float]
    applied: bool

    def forward(self, cost):
        if not self.applied:
            return np.asarray(cost, dtype=float)
        a, b = self.target
        return a + (np.asarray(cost, dtype=float) - self.cost_lo) * (b - a) / (self.cost_hi - self.cost_lo)

    def inverse(self, scaled):
        if not self.applied:
            return np.asarray(scaled, dtype=float)
        a, b = self.target
        return self.cost_lo + (np.asarray(scaled, dtype=float) - a) * (self.cost_hi - self.cost_lo) / (b - a)


def scale_points(points: Sequence[ImportancePoint], target: tuple[float, float] = (-60.0, 60.0),
                 enabled: bool = True) -> tuple[np.ndarray, ScalingSpec]:
    """Min-max map of the cost coordinate onto ``target``; sizes stay in kWh and m2.

    With scaling disabled the coordinates pass through unchanged. If every
    cost is equal the cost axis is zeroed (with a warning) so that only the
    sizes drive the clustering.
    """
    X = np.array([q.coords for q in points], dtype=float)
    lo, hi = float(X[:, 0].min()), float(X[:, 0].max())
    if not enabled:
        return X, ScalingSpec(lo, hi, target, False)
    if hi <= lo:
        warnings.warn("all subsample costs are equal; clustering on sizes only", stacklevel=2)
        X[:, 0] = 0.0
        return X, ScalingSpec(lo, hi, target, False)
    spec = ScalingSpec(lo, hi, target, True)
    X[:, 0] = spec.forward(X[:, 0])
    return X, spec


@dataclass
class ClusterModel:
    n_c: int
    representative_ids: list[int]  # subsample ids, ascending
    weights: list[int]
    medoids: np.ndarray  # coordinates of the representatives
    within_cluster_max: np.ndarray
    labels: np.ndarray  # cluster position for every subsample
    scaling: ScalingSpec | None
    m: int
    k_history: list[tuple[int, float]] = field(default_factory=list)

    def check(self) -> None:
        if sum(self.weights) != self.m:
            raise AssertionError("cluster weights do not sum to m")

    def augmented(self, extra_ids: Sequence[int]) -> ClusterModel:
        """Add subsamples as singleton clusters of weight one."""
        rows = list(zip(self.representative_ids, self.weights, self.medoids, self.within_cluster_max))
        for i in extra_ids:
            if i not in self.representative_ids:
                rows.append((i, 1, np.full(self.medoids.shape[1], np.nan), 0.0))
        rows.sort(key=lambda r: r[0])
        return ClusterModel(n_c=len(rows), representative_ids=[int(r[0]) for r in rows],
                            weights=[int(r[1]) for r in rows], medoids=np.array([r[2] for r in rows]),
                            within_cluster_max=np.array([r[3] for r in rows]), labels=self.labels,
                            scaling=self.scaling, m=sum(int(r[1]) for r in rows),
                            k_history=list(self.k_history))


def _model_from(a, X: np.ndarray, ids: Sequence[int], scaling, history) -> ClusterModel:
    order = np.argsort(a.medoids, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    med = a.medoids[order]
    return ClusterModel(n_c=a.k, representative_ids=[int(ids[i]) for i in med],
                        weights=[int(v) for v in a.sizes[order]], medoids=X[med].copy(),
                        within_cluster_max=a.max_dist[order].copy(), labels=relabel[a.labels],
                        scaling=scaling, m=len(X), k_history=history)


def select_representatives(X: np.ndarray, k_max: int = 100, d_max: float = 10.0, seed: int = 0,
                           n_c: int | None = None, ids: Sequence[int] | None = None,
                           scaling: ScalingSpec | None = None) -> ClusterModel:
    """Grow k from 2 until every point lies within ``d_max`` of its medoid or ``k_max`` is reached.

    ``n_c`` bypasses the loop and clusters directly with that many medoids.
    ``ids`` maps rows of ``X`` to subsample ids (default ``range(m)``).
    """
    m = len(X)
    ids = list(ids) if ids is not None else list(range(m))
    D = distance_matrix(X)
    if n_c is not None:
        if not 1 <= n_c <= m:
            raise ValueError(f"n_c={n_c} must lie in [1, {m}]")
        a = kmedoids(k=n_c, seed=seed, D=D)
        return _model_from(a, X, ids, scaling, [(n_c, float(a.max_dist.max()))])
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    history = []
    k = min(2, m)
    while True:
        a = kmedoids(k=k, seed=seed, D=D)
        worst = float(a.max_dist.max())
        history.append((k, worst))
        if worst < d_max or k >= min(k_max, m):
            return _model_from(a, X, ids, scaling, history)
        k += 1


def weighted_objective(values: Sequence[float], weights: Sequence[float], m: int,
                       measure: RiskMeasure = EXPECTATION) -> float:
    """Risk of the representatives' annualised costs.

    Expectation is ``sum(nu_i * V_i) / m`` accumulated in order, so that
    with every subsample its own representative it reproduces the plain
    mean bit for bit; the worst case is ``max(V_i)``.
    """
    if measure.kind == "worst_case":
        return max(float(v) for v in values)
    total = 0.0
    for v, w in zip(values, weights):
        total += float(w) * float(v)
    return total / m


def save_points(points: Sequence[ImportancePoint], labels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subsample", "V_star", "battery_units", "pv_units", "cluster"])
        for q, c in zip(points, labels):
            w.writerow([q.subsample_id, repr(q.V_star), q.p_star.battery_units, q.p_star.pv_units, int(c)])


def save_clusters(cm: ClusterModel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "representative", "weight", "cost_coord", "battery_kwh", "pv_m2", "max_dist"])
        for i, (rid, wt) in enumerate(zip(cm.representative_ids, cm.weights)):
            w.writerow([i, rid, wt, *[repr(float(v)) for v in cm.medoids[i]],
                        repr(float(cm.within_cluster_max[i]))])


@dataclass
class _ImportanceTask:
    store: OperationStore
    lattice: Lattice
    econ: EconomicsSpec
    method: str

    def __call__(self, job):
        h, known = job
        local = OperationStore([self.store.cases[h]], self.store.pc, self.store.x_hat, self.store.model, known)
        point = importance_solve(local, 0, self.lattice, self.econ, self.method)
        return ImportancePoint(h, point.p_star, point.V_star, point.x_hat), local.table


def importance_all(store: OperationStore, lattice: Lattice, econ: EconomicsSpec,
                   method: str = "pattern", map_fn=None) -> list[ImportancePoint]:
    """Score every case; ``map_fn`` may be an ordered parallel map. Results fill ``store``'s memo."""
    task = _ImportanceTask(store.fork(), lattice, econ, method)
    by_case = {c.key: {} for c in store.cases}
    for k, v in store.table.items():
        if k[0] in by_case:
            by_case[k[0]][k] = v
    jobs = [(h, dict(by_case[c.key])) for h, c in enumerate(store.cases)]
    out = []
    for point, table in (map_fn or map)(task, jobs):
        store.table.update(table)
        out.append(point)
    return out
