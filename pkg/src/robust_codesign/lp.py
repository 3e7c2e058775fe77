"""Linear programming core.

Problems are stored in the bounded form::

    min c'x   s.t.  row_lo <= A x <= row_up,  lb <= x <= ub

Two solvers are available behind :func:`solve_lp`: HiGHS dual simplex
(through scipy, the default) and a dense bounded-variable revised primal
simplex with Bland's rule. :func:`vertex_oracle` enumerates basic
solutions and is only meant for small test instances.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .constants import FEAS_TOL, OPT_TOL

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpStallError(RuntimeError):
    """The solver stopped without a certificate (iteration limit or numerics)."""

    def __init__(self, message: str, iterations: int | None = None, detail: str = ""):
        super().__init__(f"{message} (iterations={iterations}) {detail}".strip())
        self.iterations = iterations
        self.detail = detail


@dataclass(frozen=True, eq=False)
class LpProblem:
    cost: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_up: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float)
        A = sp.csr_matrix(self.A, dtype=float)
        n = len(cost)
        if A.shape[1] != n and not (A.shape[0] == 0 and n >= 0):
            raise ValueError("constraint matrix column count differs from cost length")
        if A.shape[0] == 0:
            A = sp.csr_matrix((0, n))
        arrays = {"row_lo": (self.row_lo, A.shape[0]), "row_up": (self.row_up, A.shape[0]),
                  "lb": (self.lb, n), "ub": (self.ub, n)}
        for name, (val, size) in arrays.items():
            arr = np.asarray(val, dtype=float).reshape(-1)
            if len(arr) != size:
                raise ValueError(f"{name} has length {len(arr)}, expected {size}")
            object.__setattr__(self, name, arr)
        if (self.row_lo > self.row_up).any() or (self.lb > self.ub).any():
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "A", A)

    @property
    def n_vars(self) -> int:
        return len(self.cost)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def scaled(self, lam: float) -> LpProblem:
        return LpProblem(self.cost * lam, self.A, self.row_lo, self.row_up, self.lb, self.ub, self.names)

    def residual(self, x: np.ndarray) -> float:
        """Largest bound or row violation at ``x``."""
        ax = self.A @ x if self.n_rows else np.zeros(0)
        viol = [np.maximum(self.lb - x, 0), np.maximum(x - self.ub, 0),
                np.maximum(self.row_lo - ax, 0), np.maximum(ax - self.row_up, 0)]
        return float(max((v.max() if len(v) else 0.0) for v in viol))


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    residual: float = 0.0
    iterations: int = 0
    row_duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _bound_term(mult: np.ndarray, lo: np.ndarray, up: np.ndarray, tol: float) -> float:
    pos = np.where(mult > tol, mult * np.where(np.isfinite(lo), lo, 0.0), 0.0)
    neg = np.where(mult < -tol, mult * np.where(np.isfinite(up), up, 0.0), 0.0)
    return float(pos.sum() + neg.sum())


def duality_gap(lp: LpProblem, sol: LpSolution, tol: float = 1e-9) -> float:
    """``c'x`` minus the dual objective built from the returned multipliers."""
    y, d = sol.row_duals, sol.reduced_costs
    dual = _bound_term(y, lp.row_lo, lp.row_up, tol) + _bound_term(d, lp.lb, lp.ub, tol)
    return float(lp.cost @ sol.x - dual)


def dual_residual(lp: LpProblem, sol: LpSolution) -> float:
    """``max |c - A'y - d|``: stationarity of the returned multipliers."""
    r = lp.cost - (lp.A.T @ sol.row_duals if lp.n_rows else 0.0) - sol.reduced_costs
    return float(np.abs(r).max()) if len(r) else 0.0


def solve_lp(lp: LpProblem, tol: float = FEAS_TOL, method: str = "highs") -> LpSolution:
    if method == "highs":
        return _solve_highs(lp, tol)
    if method == "simplex":
        return BoundedSimplex(lp, tol).solve()
    raise ValueError(f"unknown LP method {method!r}")


# ---------------------------------------------------------------------------
# HiGHS backend


def _solve_highs(lp: LpProblem, tol: float) -> LpSolution:
    eq = lp.row_lo == lp.row_up
    up = ~eq & np.isfinite(lp.row_up)
    lo = ~eq & np.isfinite(lp.row_lo)
    A = lp.A
    A_ub = sp.vstack([A[up], -A[lo]]).tocsr() if (up.any() or lo.any()) else None
    b_ub = np.concatenate([lp.row_up[up], -lp.row_lo[lo]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = lp.row_lo[eq] if eq.any() else None
    bounds = np.column_stack([np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
                              np.where(np.isfinite(lp.ub), lp.ub, np.inf)])
    opts = {"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": OPT_TOL,
            "presolve": True}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = linprog(lp.cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                      method="highs-ds", options=opts)
    if res.status in (2, 3, 4):
        # presolve verdicts on infeasibility/unboundedness are re-checked without it
        opts["presolve"] = False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = linprog(lp.cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                          method="highs-ds", options=opts)
        if res.status in (2, 3):
            return LpSolution(INFEASIBLE if res.status == 2 else UNBOUNDED,
                              iterations=int(res.nit or 0), info={"message": res.message})
    if res.status != 0:
        raise LpStallError("HiGHS did not reach optimality", int(res.nit or 0), str(res.message))
    x = np.asarray(res.x, dtype=float)
    y = np.zeros(lp.n_rows)
    if A_eq is not None:
        y[eq] = res.eqlin.marginals
    if A_ub is not None:
        m = res.ineqlin.marginals
        nu = int(up.sum())
        y[up] += m[:nu]
        y[lo] -= m[nu:]
    d = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return LpSolution(OPTIMAL, x=x, objective=float(lp.cost @ x), residual=lp.residual(x),
                      iterations=int(res.nit or 0), row_duals=y, reduced_costs=d)


# ---------------------------------------------------------------------------
# Native bounded-variable revised simplex


class BoundedSimplex:
    """Two-phase revised primal simplex on ``A x - s = 0`` with bounded x and s.

    Pricing and ratio ties follow Bland's rule (lowest index), which rules
    out cycling; the basis inverse is refactorised periodically.
    """

    refactor_every = 50

    def __init__(self, lp: LpProblem, tol: float = FEAS_TOL, max_iter: int = 50_000):
        self.lp = lp
        self.tol = tol
        self.max_iter = max_iter
        m, n = lp.n_rows, lp.n_vars
        A = lp.A.toarray()
        # columns: x (n), slacks (m), artificials (m)
        self.M = np.hstack([A, -np.eye(m), np.eye(m)])
        self.lo = np.concatenate([lp.lb, lp.row_lo, np.zeros(m)])
        self.up = np.concatenate([lp.ub, lp.row_up, np.full(m, np.inf)])
        self.n, self.m = n, m
        self.iterations = 0

    def _nonbasic_value(self, j: int) -> float:
        if np.isfinite(self.lo[j]):
            return self.lo[j]
        if np.isfinite(self.up[j]):
            return self.up[j]
        return 0.0

    def _refactor(self):
        self.Binv = np.linalg.inv(self.M[:, self.basis])

    def _basic_values(self):
        nb = self.value.copy()
        nb[self.basis] = 0.0
        return -self.Binv @ (self.M @ nb)

    def _iterate(self, cost: np.ndarray, allowed: np.ndarray) -> str:
        tol = self.tol
        m = self.m
        since = 0
        while True:
            if self.iterations >= self.max_iter:
                raise LpStallError("simplex iteration limit", self.iterations)
            if since >= self.refactor_every:
                self._refactor()
                self.value[self.basis] = self._basic_values()
                since = 0
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.M
            in_basis = np.zeros(len(cost), dtype=bool)
            in_basis[self.basis] = True
            entering = -1
            direction = 0
            for j in np.flatnonzero(allowed & ~in_basis):
                if self.lo[j] == self.up[j]:
                    continue
                at_lo = np.isfinite(self.lo[j]) and self.value[j] <= self.lo[j] + tol
                at_up = np.isfinite(self.up[j]) and self.value[j] >= self.up[j] - tol
                if d[j] < -tol and not at_up:
                    entering, direction = j, 1
                    break
                if d[j] > tol and not at_lo:
                    entering, direction = j, -1
                    break
            if entering < 0:
                return OPTIMAL
            col = self.Binv @ self.M[:, entering]
            # basic x_B changes by -direction * col * t
            delta = -direction * col
            step = self.up[entering] - self.lo[entering]
            leave_pos, leave_to = -1, None
            best = step if np.isfinite(step) else np.inf
            for i in range(m):
                bi = self.basis[i]
                if delta[i] < -1e-12 and np.isfinite(self.lo[bi]):
                    ratio = (self.value[bi] - self.lo[bi]) / -delta[i]
                    bound = self.lo[bi]
                elif delta[i] > 1e-12 and np.isfinite(self.up[bi]):
                    ratio = (self.up[bi] - self.value[bi]) / delta[i]
                    bound = self.up[bi]
                else:
                    continue
                ratio = max(ratio, 0.0)
                if ratio < best - 1e-12 or (abs(ratio - best) <= 1e-12 and leave_pos >= 0
                                            and bi < self.basis[leave_pos]):
                    best, leave_pos, leave_to = ratio, i, bound
            if not np.isfinite(best):
                return UNBOUNDED
            self.iterations += 1
            since += 1
            self.value[self.basis] += delta * best
            self.value[entering] += direction * best
            if leave_pos < 0:
                # bound flip of the entering variable
                continue
            leaving = self.basis[leave_pos]
            self.value[leaving] = leave_to
            piv = col[leave_pos]
            row = self.Binv[leave_pos] / piv
            self.Binv -= np.outer(col, row)
            self.Binv[leave_pos] = row
            self.basis[leave_pos] = entering

    def solve(self) -> LpSolution:
        n, m = self.n, self.m
        total = n + 2 * m
        self.value = np.array([self._nonbasic_value(j) for j in range(total)])
        resid = -(self.M[:, : n + m] @ self.value[: n + m])
        # flip artificial columns so that they start non-negative
        sign = np.where(resid < 0, -1.0, 1.0)
        self.M[:, n + m:] = np.diag(sign)
        self.value[n + m:] = np.abs(resid)
        self.basis = np.arange(n + m, total)
        self._refactor()
        phase1 = np.zeros(total)
        phase1[n + m:] = 1.0
        allowed = np.ones(total, dtype=bool)
        allowed[n + m:] = False
        self._iterate(phase1, allowed)
        infeas = float(self.value[n + m:].sum())
        scale = max(1.0, float(np.abs(self.M[:, :n]).max())) if n and m else 1.0
        if infeas > max(self.tol, 1e-9) * scale:
            return LpSolution(INFEASIBLE, iterations=self.iterations)
        # artificials are pinned at zero for phase 2
        self.up[n + m:] = 0.0
        self.value[n + m:] = np.where(np.isin(np.arange(n + m, total), self.basis),
                                      self.value[n + m:], 0.0)
        cost = np.zeros(total)
        cost[:n] = self.lp.cost
        status = self._iterate(cost, allowed)
        if status == UNBOUNDED:
            return LpSolution(UNBOUNDED, iterations=self.iterations)
        self._refactor()
        self.value[self.basis] = self._basic_values()
        x = self.value[:n].copy()
        y_full = cost[self.basis] @ self.Binv
        d = self.lp.cost - (y_full @ self.M[:, :n])
        # slack column is -e_i, so its reduced cost equals y_i
        return LpSolution(OPTIMAL, x=x, objective=float(self.lp.cost @ x),
                          residual=self.lp.residual(x), iterations=self.iterations,
                          row_duals=y_full, reduced_costs=d)


# ---------------------------------------------------------------------------
# Vertex enumeration oracle


def _halfspaces(lp: LpProblem):
    """Finite bounds as (normal, rhs, sense) with sense +1 for >=, -1 for <=."""
    out = []
    A = lp.A.toarray()
    n = lp.n_vars
    eye = np.eye(n)
    for i in range(lp.n_rows):
        if np.isfinite(lp.row_lo[i]):
            out.append((A[i], lp.row_lo[i], 1))
        if np.isfinite(lp.row_up[i]):
            out.append((A[i], lp.row_up[i], -1))
    for j in range(n):
        if np.isfinite(lp.lb[j]):
            out.append((eye[j], lp.lb[j], 1))
        if np.isfinite(lp.ub[j]):
            out.append((eye[j], lp.ub[j], -1))
    return out


def vertex_oracle(lp: LpProblem, max_vars: int = 12, tol: float = 1e-9) -> LpSolution:
    """Brute-force LP solve by enumerating basic solutions.

    Requires a pointed feasible region (the finite-bound normals span R^n).
    Unboundedness is detected through the extreme rays of the recession cone.
    """
    n = lp.n_vars
    if n > max_vars:
        raise ValueError(f"vertex oracle limited to {max_vars} variables, got {n}")
    hs = _halfspaces(lp)
    normals = np.array([h[0] for h in hs]) if hs else np.zeros((0, n))
    if n and (not hs or np.linalg.matrix_rank(normals) < n):
        raise ValueError("feasible region is not pointed; oracle needs finite bounds spanning R^n")
    rhs = np.array([h[1] for h in hs])
    sense = np.array([h[2] for h in hs])
    best_x, best_val = None, np.inf
    for combo in _combos(len(hs), n):
        M = normals[combo]
        ok = np.abs(np.linalg.det(M)) > 1e-10
        if not ok.any():
            continue
        X = np.linalg.solve(M[ok], rhs[combo[ok]][..., None])[..., 0]
        slack = (X @ normals.T - rhs) * sense
        feas = (slack >= -tol * np.maximum(1.0, np.abs(X).max(axis=1))[:, None]).all(axis=1)
        for x in X[feas]:
            val = float(lp.cost @ x)
            if val < best_val - 1e-12:
                best_x, best_val = x, val
    if best_x is None:
        return LpSolution(INFEASIBLE)
    # recession cone: sense * normal . d >= 0 for every finite half-space
    cone = np.array([h[2] * h[0] for h in hs])
    for combo in _combos(len(hs), n - 1):
        rays = _null_vectors(cone[combo], n)
        rays = np.concatenate([rays, -rays])
        norm = np.abs(rays).max(axis=1)
        rays = rays[norm > 1e-12] / norm[norm > 1e-12, None]
        inside = (rays @ cone.T >= -1e-10).all(axis=1) & (rays @ lp.cost < -1e-9)
        if inside.any():
            return LpSolution(UNBOUNDED)
    return LpSolution(OPTIMAL, x=best_x, objective=best_val, residual=lp.residual(best_x))


def _combos(total: int, r: int, chunk: int = 50_000):
    it = itertools.combinations(range(total), r)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=int).reshape(len(block), r)


def _null_vectors(M: np.ndarray, n: int) -> np.ndarray:
    """Generalised cross product of each ``(n - 1, n)`` block: a normal to its rows."""
    if n == 1:
        return np.ones((len(M), 1))
    out = np.empty((len(M), n))
    for j in range(n):
        minor = np.delete(M, j, axis=2)
        out[:, j] = (-1) ** j * np.linalg.det(minor)
    return out


# ---------------------------------------------------------------------------
# Debug dump


def dump_lp(lp: LpProblem, path) -> None:
    """Write a fixed-layout text view of ``lp`` with 17 significant digits."""

    def f(v: float) -> str:
        return format(v, ".17g")

    lines = [f"VARS {lp.n_vars}", f"ROWS {lp.n_rows}", "COST"]
    lines += [f"{j} {f(c)}" for j, c in enumerate(lp.cost)]
    lines.append("BOUNDS")
    lines += [f"{j} {f(lo)} {f(up)}" for j, (lo, up) in enumerate(zip(lp.lb, lp.ub))]
    lines.append("ROWS")
    A = lp.A.tocsr()
    for i in range(lp.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = " ".join(f"{A.indices[k]}:{f(A.data[k])}" for k in range(lo, hi))
        lines.append(f"{i} {f(lp.row_lo[i])} {f(lp.row_up[i])} | {terms}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
