"""Derivative-free search over integer lattices and scenario risk measures."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

Index = tuple[int, ...]


@dataclass(frozen=True)
class Dim:
    lower: float
    upper: float
    step: float

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("lattice step must be positive")
        if self.upper < self.lower:
            raise ValueError("lattice upper bound below lower bound")

    @property
    def count(self) -> int:
        return int(math.floor((self.upper - self.lower) / self.step + 1e-9)) + 1

    def value(self, i: int) -> float:
        return self.lower + i * self.step


@dataclass(frozen=True)
class Lattice:
    """Cartesian product of uniformly spaced axes; points are addressed by integer index tuples."""

    dims: tuple[Dim, ...]

    @classmethod
    def integer(cls, bounds: Sequence[tuple[int, int]]) -> Lattice:
        return cls(tuple(Dim(lo, hi, 1) for lo, hi in bounds))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d.count for d in self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def point(self, idx: Index) -> tuple[float, ...]:
        return tuple(d.value(i) for d, i in zip(self.dims, idx))

    def contains(self, idx: Index) -> bool:
        return len(idx) == len(self.dims) and all(0 <= i < n for i, n in zip(idx, self.shape))

    def clip(self, idx: Iterable[int]) -> Index:
        return tuple(min(max(int(i), 0), n - 1) for i, n in zip(idx, self.shape))

    def indices(self) -> Iterable[Index]:
        """All points in lexicographic order."""
        return itertools.product(*(range(n) for n in self.shape))


@dataclass(frozen=True)
class RiskMeasure:
    kind: str = "expectation"

    def __post_init__(self):
        if self.kind not in ("expectation", "worst_case"):
            raise ValueError(f"unknown risk measure {self.kind!r}")

    @classmethod
    def parse(cls, name: str) -> RiskMeasure:
        aliases = {"mean": "expectation", "expectation": "expectation",
                   "max": "worst_case", "worst_case": "worst_case"}
        if name not in aliases:
            raise ValueError(f"unknown risk measure {name!r}")
        return cls(aliases[name])


EXPECTATION = RiskMeasure("expectation")
WORST_CASE = RiskMeasure("worst_case")


def risk(values: Sequence[float], measure: RiskMeasure = EXPECTATION) -> float:
    """Mean or max; sums run in the given order so results are reproducible bitwise."""
    if len(values) == 0:
        raise ValueError("risk of an empty sample")
    if measure.kind == "worst_case":
        return max(float(v) for v in values)
    total = 0.0
    for v in values:
        total += float(v)
    return total / len(values)


@dataclass
class TraceRow:
    eval: int
    index: Index
    point: tuple[float, ...]
    value: float
    incumbent: float


@dataclass
class SearchResult:
    index: Index
    point: tuple[float, ...]
    value: float
    trace: list[TraceRow] = field(default_factory=list)
    failures: dict[Index, str] = field(default_factory=dict)
    n_evals: int = 0


class _Evaluator:
    """Caches objective values by lattice index and records the trace."""

    def __init__(self, objective, lattice: Lattice, budget: float, map_fn):
        self.objective = objective
        self.lattice = lattice
        self.budget = budget
        self.map_fn = map_fn or map
        self.cache: dict[Index, float] = {}
        self.trace: list[TraceRow] = []
        self.failures: dict[Index, str] = {}
        self.best: tuple[float, Index] | None = None

    def evaluate(self, batch: Sequence[Index]) -> None:
        todo = []
        for idx in batch:
            if idx not in self.cache and idx not in todo:
                todo.append(idx)
        room = int(min(len(todo), self.budget - len(self.cache)))
        todo = todo[: max(room, 0)]
        if not todo:
            return
        points = [self.lattice.point(i) for i in todo]
        for idx, pt, res in zip(todo, points, self.map_fn(_Call(self.objective), points)):
            val, err = res
            if err is not None:
                self.failures[idx] = err
            self.cache[idx] = val
            if self.best is None or (val, idx) < self.best:
                self.best = (val, idx)
            self.trace.append(TraceRow(len(self.cache), idx, pt, val, self.best[0]))

    @property
    def exhausted(self) -> bool:
        return len(self.cache) >= self.budget

    def result(self) -> SearchResult:
        v, idx = self.best
        return SearchResult(idx, self.lattice.point(idx), v, self.trace, self.failures, len(self.cache))


class _Call:
    """Picklable wrapper returning ``(value, error)`` with failures mapped to +inf."""

    def __init__(self, objective):
        self.objective = objective

    def __call__(self, point):
        try:
            v = float(self.objective(point))
        except Exception as exc:  # noqa: BLE001 - any failure makes the point infeasible
            return math.inf, f"{type(exc).__name__}: {exc}"
        if math.isnan(v):
            return math.inf, "NaN objective"
        return v, None


def _directions(d: int) -> list[Index]:
    """Coordinate directions first, then the remaining diagonals of the unit cube."""
    coords = []
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            coords.append(tuple(e))
    diags = [v for v in itertools.product((-1, 0, 1), repeat=d)
             if sum(map(abs, v)) > 1] if d <= 4 else [(1,) * d, (-1,) * d]
    return coords + diags


def pattern_search(objective: Callable[[tuple[float, ...]], float], lattice: Lattice,
                   start: Index | None = None, budget: float = math.inf,
                   map_fn=None, bisect: tuple[int, float] | None = None) -> SearchResult:
    """Mesh-adaptive pattern search restricted to lattice points.

    Each iteration polls the incumbent plus mesh-scaled directions (all
    polled points are evaluated, so the outcome does not depend on poll
    order). Success doubles the mesh, failure halves it; once a poll fails
    at mesh 1 every coordinate line through the incumbent is swept before
    the search stops. Ties are resolved towards the lexicographically
    smaller index. ``map_fn`` may be an ordered parallel map.

    ``bisect=(axis, level)`` adds a search step before polling: along every
    line parallel to ``axis`` whose last point is below ``level``, the
    first index below ``level`` is located by bisection. All lines are
    bisected together, one batch per round.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    start = tuple(start) if start is not None else tuple(n // 2 for n in lattice.shape)
    if not lattice.contains(start):
        raise ValueError(f"start {start} is not on the lattice")
    ev = _Evaluator(objective, lattice, budget, map_fn)
    ev.evaluate([start])
    shape = lattice.shape
    d = len(shape)
    max_mesh = max(1, max(shape) // 2)
    mesh = max(1, max(shape) // 4)
    dirs = _directions(d)

    # coarse search step over the whole lattice
    stride = [max(1, (n - 1) // 3) for n in shape]
    ev.evaluate(list(itertools.product(*(range(0, n, s) for n, s in zip(shape, stride)))))
    if bisect is not None:
        _bisect_step(ev, lattice, *bisect)

    while not ev.exhausted:
        inc = ev.best[1]
        poll = []
        for v in dirs:
            q = lattice.clip(i + mesh * s for i, s in zip(inc, v))
            if q != inc and q not in poll:
                poll.append(q)
        ev.evaluate(poll)
        if ev.best[1] != inc:
            mesh = min(2 * mesh, max_mesh)
            continue
        if mesh > 1:
            mesh = max(1, mesh // 2)
            continue
        sweep = []
        for i in range(d):
            for j in range(shape[i]):
                q = inc[:i] + (j,) + inc[i + 1:]
                if q not in ev.cache:
                    sweep.append(q)
        ev.evaluate(sweep)
        if ev.best[1] == inc:
            break
    return ev.result()


def _bisect_step(ev: _Evaluator, lattice: Lattice, axis: int, level: float) -> None:
    shape = lattice.shape
    n = shape[axis]
    others = [range(m) for k, m in enumerate(shape) if k != axis]

    def at(base, j):
        return base[:axis] + (j,) + base[axis:]

    bases = list(itertools.product(*others))
    ev.evaluate([at(b, n - 1) for b in bases])
    # invariant per line: index hi is below level, indices < lo are not
    lines = {b: [0, n - 1] for b in bases if ev.cache.get(at(b, n - 1), math.inf) < level}
    while lines and not ev.exhausted:
        live = {b: lh for b, lh in lines.items() if lh[0] < lh[1]}
        if not live:
            break
        ev.evaluate([at(b, (lo + hi) // 2) for b, (lo, hi) in live.items()])
        for b, lh in live.items():
            mid = (lh[0] + lh[1]) // 2
            if at(b, mid) not in ev.cache:
                return
            if ev.cache[at(b, mid)] < level:
                lh[1] = mid
            else:
                lh[0] = mid + 1


def exhaustive(objective: Callable[[tuple[float, ...]], float], lattice: Lattice,
               cap: int = 100_000, map_fn=None) -> SearchResult:
    """Evaluate every lattice point; ties go to the lexicographically first index."""
    if lattice.size > cap:
        raise ValueError(f"lattice has {lattice.size} points, cap is {cap}")
    ev = _Evaluator(objective, lattice, math.inf, map_fn)
    ev.evaluate(list(lattice.indices()))
    return ev.result()


def save_trace(result: SearchResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        d = len(result.index)
        w.writerow(["eval", *[f"x{i}" for i in range(d)], "value", "incumbent"])
        for r in result.trace:
            w.writerow([r.eval, *[repr(float(x)) for x in r.point], repr(r.value), repr(r.incumbent)])


def best_of(values: dict[Index, float]) -> tuple[Index, float]:
    """Lexicographic (value, index) minimum of a cached table."""
    idx = min(values, key=lambda i: (values[i], i))
    return idx, values[idx]

