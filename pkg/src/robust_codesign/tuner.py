"""Automatic EMPC tuning over the integer controller lattice.

Two objectives are traded off: ``j2``, the l1 gap between a candidate's
per-interval closed-loop costs and those of a fine reference controller,
and ``j3``, a computational-effort proxy that prefers short horizons and
coarse steps. Sizing samples enter through the max over their ``j2``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .empc import ClosedLoopError, ControllerParams, Model, SizingParams, closed_loop
from .search import Lattice, pattern_search
from .thermal import SystemState
from .timeseries import ExogenousSeries

log = logging.getLogger(__name__)


def j3(pc: ControllerParams) -> float:
    return pc.n_f - 1.0 / (4 * pc.n_x) - 1.0 / (4 * pc.n_x * pc.n_s)


def lattice_cap(delta_T: float, T_d_min: float) -> int:
    ratio = Fraction(delta_T).limit_denominator(10**6) / Fraction(T_d_min).limit_denominator(10**6)
    if ratio.denominator != 1:
        raise ValueError("delta_T must be a multiple of T_d_min")
    return int(ratio)


def enumerate_pc(delta_T: float, T_d_min: float, n_f_range: tuple[int, int]) -> list[ControllerParams]:
    """Feasible triples in lattice order (n_s, then n_x, then n_f)."""
    cap = lattice_cap(delta_T, T_d_min)
    lo, hi = n_f_range
    out = [ControllerParams(n_s, n_x, n_f, delta_T, T_d_min)
           for n_s in range(1, cap + 1) for n_x in range(1, cap // n_s + 1)
           for n_f in range(max(lo, 1), hi + 1)]
    if not out:
        raise ValueError("empty controller lattice")
    return out


def default_initial_states(p: SizingParams, model: Model) -> list[SystemState]:
    """Empty and cold, full and warm."""
    return [SystemState(T=model.T_lo, SoC=0.0), SystemState(T=model.T_hi, SoC=p.battery_kwh)]


def aggregate(V: np.ndarray, T_s: Fraction, block: Fraction) -> np.ndarray:
    """Sum consecutive sampling intervals into blocks of length ``block`` minutes."""
    r = block / T_s
    if r.denominator != 1:
        raise ValueError("block is not a multiple of the sampling time")
    r = int(r)
    if len(V) % r:
        raise ValueError("span is not a whole number of blocks")
    return V.reshape(-1, r).sum(axis=1)


def _lcm(a: Fraction, b: Fraction) -> Fraction:
    num = math.lcm(a.numerator * b.denominator, b.numerator * a.denominator)
    return Fraction(num, a.denominator * b.denominator)


def j2_distance(V: np.ndarray, T_s: Fraction, V_ref: np.ndarray, T_s_ref: Fraction) -> float:
    """l1 distance after summing both cost vectors onto their common sampling grid."""
    block = _lcm(Fraction(T_s), Fraction(T_s_ref))
    a = aggregate(np.asarray(V), Fraction(T_s), block)
    b = aggregate(np.asarray(V_ref), Fraction(T_s_ref), block)
    if len(a) != len(b):
        raise ValueError("candidate and reference cover different spans")
    return float(np.abs(a - b).sum())


@dataclass
class Reference:
    x_worst: SystemState
    index: int
    V: np.ndarray
    T_s: Fraction
    totals: list[float]


def reference_run(window: ExogenousSeries, p: SizingParams, pc_ref: ControllerParams,
                  x0_set: Sequence[SystemState], span_hours: float, model: Model | None = None,
                  scenario: str = "") -> Reference:
    """Reference closed loop from every initial state; keep the costliest (first on ties)."""
    model = model or Model()
    if span_hours < 2 * pc_ref.n_f:
        raise ValueError("tuning window must be at least twice the reference horizon")
    runs = []
    for x0 in x0_set:
        try:
            runs.append(closed_loop(x0, window, p, pc_ref, span_hours, model))
        except ClosedLoopError as exc:
            raise RuntimeError(f"reference run failed on scenario {scenario or window.name}: {exc}") from exc
    totals = [r.total_cost for r in runs]
    i = int(np.argmax(totals))
    return Reference(x_worst=x0_set[i], index=i, V=runs[i].V_cl, T_s=pc_ref.T_s, totals=totals)


def j2(p: SizingParams, pc: ControllerParams, ref: Reference, window: ExogenousSeries,
       span_hours: float, model: Model | None = None) -> float:
    r = closed_loop(ref.x_worst, window, p, pc, span_hours, model or Model())
    return j2_distance(r.V_cl, pc.T_s, ref.V, ref.T_s)


@dataclass(frozen=True)
class TuningPoint:
    pc: ControllerParams
    j2: float  # max over sizing samples and windows
    j3: float
    per_p: tuple[float, ...] = ()

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.j2)


@dataclass
class ParetoFront:
    points: list  # (j3, j2, order, payload) sorted by j3

    def audit(self) -> bool:
        return dominance_audit([(q[0], q[1]) for q in self.points])


def dominates(a, b) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def pareto_front(points: Sequence[tuple[float, float]], payload: Sequence | None = None) -> ParetoFront:
    """Non-dominated subset (both objectives minimised); duplicates keep the lowest index."""
    if not points:
        raise ValueError("pareto_front of an empty set")
    payload = payload if payload is not None else list(range(len(points)))
    order = sorted(range(len(points)), key=lambda i: (points[i][0], points[i][1], i))
    kept = []
    best_second = math.inf
    for i in order:
        a, b = points[i]
        if b < best_second:
            kept.append((a, b, i, payload[i]))
            best_second = b
    return ParetoFront(kept)


def dominance_audit(points: Sequence[tuple[float, float]]) -> bool:
    """Quadratic check that no member dominates or duplicates another."""
    for i, a in enumerate(points):
        for j, b in enumerate(points):
            if i != j and (dominates(a, b) or tuple(a) == tuple(b)):
                return False
    return True


@dataclass
class TuningObjective:
    """Max-over-samples ``j2`` of one controller; picklable for process pools."""

    windows: list[ExogenousSeries]
    p_samples: list[SizingParams]
    refs: list[list[Reference]]  # [window][p]
    span_hours: float
    model: Model

    def per_sample(self, pc: ControllerParams) -> list[float]:
        out = []
        for w, refs in zip(self.windows, self.refs):
            for p, ref in zip(self.p_samples, refs):
                try:
                    out.append(j2(p, pc, ref, w, self.span_hours, self.model))
                except ClosedLoopError as exc:
                    log.warning("closed loop failed for %s, %s: %s", pc, p, exc)
                    out.append(math.inf)
        return out

    def __call__(self, pc: ControllerParams) -> tuple[float, ...]:
        return tuple(self.per_sample(pc))


def penalised_value(pc: ControllerParams, max_j2: float, epsilon: float, n_f_max: int) -> float:
    if not math.isfinite(max_j2):
        return math.inf
    return j3(pc) if max_j2 <= epsilon else (n_f_max + 1) + max_j2


@dataclass
class TuningResult:
    pc_star: ControllerParams
    points: list[TuningPoint]
    fronts: list[ParetoFront]  # one per sizing sample
    fallback: bool
    references: list[list[Reference]]
    n_evals: int = 0


def select(points: Sequence[TuningPoint], epsilon: float) -> tuple[ControllerParams, bool]:
    """Cheapest accurate controller; falls back to the most accurate one."""
    ok = [q for q in points if q.feasible and q.j2 <= epsilon]
    if ok:
        return min(ok, key=lambda q: (q.j3, q.pc.key)).pc, False
    finite = [q for q in points if q.feasible]
    if not finite:
        raise RuntimeError("every controller failed in closed loop")
    warnings.warn(f"no controller reaches j2 <= {epsilon}; using the most accurate one", stacklevel=2)
    return min(finite, key=lambda q: (q.j2, q.j3, q.pc.key)).pc, True


def tuning_search(objective, lattice: Lattice, n_f_max: int, budget: float = math.inf, map_fn=None):
    """Pattern search on the penalised tuning objective.

    Penalised values below ``n_f_max + 1`` meet epsilon and grow with
    ``n_f``, so a bisection along the horizon axis finds the shortest
    qualifying horizon of every ``(n_s, n_x)`` before the poll refines it.
    """
    start = (0, 0, lattice.shape[2] - 1)
    return pattern_search(objective, lattice, start=start, budget=budget, map_fn=map_fn,
                          bisect=(2, n_f_max + 1))


def tune(windows: Sequence[ExogenousSeries], p_samples: Sequence[SizingParams], pc_ref: ControllerParams,
         epsilon: float, span_hours: float, n_f_range: tuple[int, int], model: Model | None = None,
         x0_sets=None, method: str = "exhaustive", map_fn=None, budget: float = math.inf) -> TuningResult:
    """Tune ``(n_s, n_x, n_f)`` on the lattice implied by ``pc_ref``'s delta_T and T_d_min.

    ``x0_sets(p)`` returns candidate initial states for the reference run;
    the default is :func:`default_initial_states`. ``method`` is
    ``"exhaustive"`` (every lattice point, full fronts) or ``"pattern"``
    (pattern search on the penalised objective; fronts from visited points).
    """
    if not p_samples:
        raise ValueError("no sizing samples")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    model = model or Model()
    x0_sets = x0_sets or (lambda p: default_initial_states(p, model))
    windows = list(windows)
    p_samples = list(p_samples)
    refs = [[reference_run(w, p, pc_ref, x0_sets(p), span_hours, model, scenario=w.name)
             for p in p_samples] for w in windows]
    inner = TuningObjective(windows, p_samples, refs, span_hours, model)
    dT, dmin = pc_ref.delta_T, pc_ref.T_d_min
    cap = lattice_cap(dT, dmin)
    lat = tuning_lattice(pc_ref, n_f_range)

    pcs = enumerate_pc(dT, dmin, n_f_range)
    if method == "exhaustive":
        mapper = map_fn or map
        per = list(mapper(inner, pcs))
        evaluated = dict(zip(pcs, per))
    elif method == "pattern":
        store = {}

        def recording(point):
            n_s, n_x, n_f = (int(round(v)) for v in point)
            if n_s * n_x > cap:
                return math.inf
            pc = ControllerParams(n_s, n_x, n_f, dT, dmin)
            vals = inner(pc)
            store[pc] = vals
            return penalised_value(pc, max(vals), epsilon, n_f_range[1])

        tuning_search(recording, lat, n_f_range[1], budget)
        evaluated = {pc: store[pc] for pc in pcs if pc in store}
    else:
        raise ValueError(f"unknown tuning method {method!r}")

    n_p = len(p_samples)
    points = []
    for pc, vals in evaluated.items():
        per_p = tuple(max(vals[w * n_p + i] for w in range(len(windows))) for i in range(n_p))
        points.append(TuningPoint(pc=pc, j2=max(per_p), j3=j3(pc), per_p=per_p))
    points.sort(key=lambda q: q.pc.key)
    pc_star, fallback = select(points, epsilon)
    fronts = []
    for i in range(n_p):
        fin = [q for q in points if math.isfinite(q.per_p[i])]
        fronts.append(pareto_front([(q.j3, q.per_p[i]) for q in fin], [q.pc for q in fin]) if fin
                      else ParetoFront([]))
    return TuningResult(pc_star=pc_star, points=points, fronts=fronts, fallback=fallback,
                        references=refs, n_evals=len(evaluated))


def tuning_lattice(pc_ref: ControllerParams, n_f_range: tuple[int, int]) -> Lattice:
    cap = lattice_cap(pc_ref.delta_T, pc_ref.T_d_min)
    return Lattice.integer([(1, cap), (1, cap), n_f_range])


def penalised_table(points: Sequence[TuningPoint], epsilon: float, n_f_max: int) -> dict:
    """Penalised tuning objective keyed by ``(n_s, n_x, n_f)``."""
    return {q.pc.key: penalised_value(q.pc, q.j2, epsilon, n_f_max) for q in points}


@dataclass
class TableObjective:
    """Lattice objective backed by precomputed values; missing (infeasible) points are +inf."""

    table: dict

    def __call__(self, point) -> float:
        return self.table.get(tuple(int(round(v)) for v in point), math.inf)


def save_points(points: Sequence[TuningPoint], path, n_p: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_s", "n_x", "n_f", *[f"j2_p{i}" for i in range(n_p)], "max_j2", "j3"])
        for q in points:
            w.writerow([q.pc.n_s, q.pc.n_x, q.pc.n_f, *[repr(v) for v in q.per_p], repr(q.j2), repr(q.j3)])


def save_fronts(fronts: Sequence[ParetoFront], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_index", "n_s", "n_x", "n_f", "j2", "j3"])
        for i, f in enumerate(fronts):
            for a, b, _, pc in f.points:
                w.writerow([i, pc.n_s, pc.n_x, pc.n_f, repr(b), repr(a)])
