"""Economic MPC for the PV/battery/heat-pump dwelling.

The optimal control problem over the prediction horizon is transcribed
with explicit Euler on the discretisation grid into an LP; the receding
horizon loop applies the first sampling interval of every plan and books
the realised electricity and carbon cost of that interval.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .constants import (BATTERY_UNIT_KWH, COST_DECIMALS, FEAS_TOL, PV_UNIT_M2, SELL_FRACTION,
                        TIE_BREAK)
from .lp import INFEASIBLE, OPTIMAL, LpProblem, LpStallError, solve_lp
from .thermal import (INPUT_NAMES, AssetParams, BuildingParams, ControlInput, SystemState,
                      cop_heat, derive_coefficients, euler_rollout, pv_power)
from .timeseries import ExogenousSeries, GridSignals

N_INPUTS = len(INPUT_NAMES)
EH, CEH, DCH, CH, BUY, SELL = range(N_INPUTS)


class TranscriptionError(ValueError):
    pass


class PlanInfeasible(RuntimeError):
    pass


class ClosedLoopError(RuntimeError):
    def __init__(self, sample: int, cause: Exception):
        super().__init__(f"closed loop failed at sample {sample}: {cause}")
        self.sample = sample
        self.cause = cause


@dataclass(frozen=True, order=True)
class ControllerParams:
    """Integer controller tuning: ``T_s = n_s*T_d``, ``delta_T = n_x*T_s``, ``t_f = n_f`` hours."""

    n_s: int
    n_x: int
    n_f: int
    delta_T: float = 15.0
    T_d_min: float = 5.0

    def __post_init__(self):
        if self.n_s < 1 or self.n_x < 1 or self.n_f < 1:
            raise ValueError("n_s, n_x and n_f must be >= 1")
        cap = Fraction(self.delta_T).limit_denominator(10**6) / Fraction(self.T_d_min).limit_denominator(10**6)
        if self.n_s * self.n_x > cap:
            raise ValueError(f"n_s*n_x={self.n_s * self.n_x} exceeds delta_T/T_d_min={float(cap):g}")
        if (Fraction(60 * self.n_f) / self.T_s).denominator != 1:
            raise ValueError("horizon must be an integer number of sampling intervals")

    @property
    def T_d(self) -> Fraction:
        """Discretisation step in minutes (exact)."""
        return Fraction(self.delta_T).limit_denominator(10**6) / (self.n_x * self.n_s)

    @property
    def T_s(self) -> Fraction:
        return self.T_d * self.n_s

    @property
    def T_d_h(self) -> float:
        return float(self.T_d / 60)

    @property
    def T_s_h(self) -> float:
        return float(self.T_s / 60)

    @property
    def N(self) -> int:
        n = Fraction(60 * self.n_f) / self.T_d
        return int(n)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.n_s, self.n_x, self.n_f)

    def __str__(self) -> str:
        return f"(n_s={self.n_s}, n_x={self.n_x}, n_f={self.n_f})"


@dataclass(frozen=True, order=True)
class SizingParams:
    """Battery size in 1 kWh units and PV area in 1.68 m2 panel units."""

    battery_units: int
    pv_units: int

    def __post_init__(self):
        if self.battery_units < 0 or self.pv_units < 0:
            raise ValueError("sizes must be non-negative")

    @property
    def battery_kwh(self) -> float:
        return self.battery_units * BATTERY_UNIT_KWH

    @property
    def pv_m2(self) -> float:
        return self.pv_units * PV_UNIT_M2

    def check(self, model: Model) -> None:
        if self.battery_kwh > model.assets.SoC_max + 1e-9:
            raise ValueError(f"battery {self.battery_kwh} kWh exceeds {model.assets.SoC_max}")
        if self.pv_m2 > model.building.S_F + 1e-9:
            raise ValueError(f"PV area {self.pv_m2:.2f} m2 exceeds floor area {model.building.S_F}")

    def __str__(self) -> str:
        return f"({self.battery_units} kWh, {self.pv_units} PV units)"


@dataclass(frozen=True)
class Model:
    """Physical parameters plus the EMPC options shared by every solve."""

    building: BuildingParams = field(default_factory=BuildingParams)
    assets: AssetParams = field(default_factory=AssetParams)
    T_lo: float = 19.0
    T_hi: float = 25.0
    soc_terminal_floor: float | None = None
    recovery_penalty: float = 1e3  # GBP per degC*h
    allow_recovery: bool = True
    lp_method: str = "highs"

    @property
    def coeffs(self):
        return _coeffs(self.building)

    def initial_state(self) -> SystemState:
        return SystemState(T=self.T_lo, SoC=0.0)


@lru_cache(maxsize=64)
def _coeffs(building: BuildingParams):
    return derive_coefficients(building)


@dataclass
class OcpSolution:
    u: np.ndarray  # (N, 6)
    x: np.ndarray  # (N + 1, 2)
    open_loop_cost: float
    slack: np.ndarray | None = None
    recovery: bool = False
    iterations: int = 0

    @property
    def max_slack(self) -> float:
        return 0.0 if self.slack is None else float(self.slack.max(initial=0.0))


@dataclass
class ClosedLoopResult:
    inputs: np.ndarray  # (K, 6) applied on each T_d interval
    states: np.ndarray  # (K + 1, 2) T and SoC on the grid
    V_cl: np.ndarray  # (M,) cost of each sampling interval
    c_el: np.ndarray  # (K,) interval-average price
    c_em: np.ndarray
    dt_h: float
    n_s: int
    comfort_violation: float
    soc_violation: float
    max_slack: float
    recovery_samples: int
    wall_time: float
    start_min: float = 0.0

    @property
    def total_cost(self) -> float:
        return float(self.V_cl.sum())

    @property
    def n_solves(self) -> int:
        return len(self.V_cl)

    @property
    def applied(self) -> list[ControlInput]:
        return [ControlInput.from_array(u) for u in self.inputs]


# ---------------------------------------------------------------------------
# Transcription


@lru_cache(maxsize=256)
def _pattern(N: int, recovery: bool):
    """Sparse (row, col) pattern for the horizon LP; values are filled per solve."""
    nu = N_INPUTS * N
    k = np.arange(N)
    iu = lambda j: k * N_INPUTS + j  # noqa: E731
    iT = nu + 2 * np.arange(N + 1)
    iS = iT + 1
    rT, rS, rB = k, N + k, 2 * N + k
    rows = [rT, rT, rT, rT, rS, rS, rS, rS, rB, rB, rB, rB, rB, rB]
    cols = [iT[1:], iT[:-1], iu(EH), iu(CEH), iS[1:], iS[:-1], iu(CH), iu(DCH),
            iu(BUY), iu(SELL), iu(DCH), iu(CH), iu(EH), iu(CEH)]
    n_rows = 3 * N
    if recovery:
        isg = nu + 2 * (N + 1) + k
        rL, rU = 3 * N + k, 4 * N + k
        rows += [rL, rL, rU, rU]
        cols += [iT[1:], isg, iT[1:], isg]
        n_rows = 5 * N
    return np.concatenate(rows), np.concatenate(cols), n_rows


def transcribe(x_i: SystemState, forecast: GridSignals, p: SizingParams, pc: ControllerParams,
               model: Model, recovery: bool = False) -> LpProblem:
    """Explicit-Euler LP for one horizon.

    Variables: six inputs per interval, then (T, SoC) at the N + 1 grid
    points, then (recovery only) one comfort slack per grid point after the
    first. The objective is the electricity bill net of sales plus carbon.
    """
    N = pc.N
    dt = pc.T_d_h
    if abs(forecast.dt_h - dt) > 1e-12:
        raise TranscriptionError(f"misaligned grid: forecast step {forecast.dt_h} h, T_d {dt} h")
    if len(forecast) < N:
        raise TranscriptionError(f"forecast too short: {len(forecast)} < {N} intervals")
    fc = forecast.head(N)
    a, b = model.assets, model.building
    co = model.coeffs
    cop = cop_heat(fc.T_e, a)
    ones = np.ones(N)
    a_T = 1.0 - dt * co.loss / co.cap
    vals = [ones, -a_T * ones, -dt * cop / co.cap, dt * a.COP_cool / co.cap * ones,
            ones, -ones, -dt * a.eta_ch * ones, dt / a.eta_ds * ones,
            ones, -ones, ones, -ones, -ones, -ones]
    rhs = [dt * co.loss * fc.T_e / co.cap, np.zeros(N),
           -pv_power(fc.I, fc.T_e, p.pv_m2, a) * ones]
    rows, cols, n_rows = _pattern(N, recovery)
    n_vars = N_INPUTS * N + 2 * (N + 1) + (N if recovery else 0)
    row_lo = np.concatenate(rhs)
    row_up = row_lo.copy()
    if recovery:
        vals += [ones, ones, ones, -ones]
        row_lo = np.concatenate([row_lo, model.T_lo * ones, -np.inf * ones])
        row_up = np.concatenate([row_up, np.inf * ones, model.T_hi * ones])
    A = sp.csr_matrix((np.concatenate(vals), (rows, cols)), shape=(n_rows, n_vars))

    S_B = p.battery_kwh
    with np.errstate(divide="ignore"):
        eh_cap = np.where(cop > 0, np.minimum(b.u_eH_max, b.Q_HP_max / np.where(cop > 0, cop, 1.0)),
                          b.u_eH_max)
    ub_u = np.empty((N, N_INPUTS))
    ub_u[:, EH] = eh_cap
    ub_u[:, CEH] = b.u_CeH_max
    ub_u[:, DCH] = S_B / a.T_ds
    ub_u[:, CH] = S_B / a.T_ds
    ub_u[:, BUY] = a.u_b_max
    ub_u[:, SELL] = a.u_s_max
    lb_x = np.empty((N + 1, 2))
    ub_x = np.empty((N + 1, 2))
    lb_x[:, 0], ub_x[:, 0] = (-np.inf, np.inf) if recovery else (model.T_lo, model.T_hi)
    lb_x[:, 1], ub_x[:, 1] = 0.0, S_B
    lb_x[0] = ub_x[0] = (x_i.T, x_i.SoC)
    if model.soc_terminal_floor is not None:
        lb_x[N, 1] = min(model.soc_terminal_floor, S_B)
    lb = np.concatenate([np.zeros(N_INPUTS * N), lb_x.ravel()] + ([np.zeros(N)] if recovery else []))
    ub = np.concatenate([ub_u.ravel(), ub_x.ravel()] + ([np.full(N, np.inf)] if recovery else []))

    cost = np.zeros(n_vars)
    cu = cost[: N_INPUTS * N].reshape(N, N_INPUTS)
    cu[:, BUY] = dt * (fc.c_el + a.carbon_price_per_kg * fc.c_em)
    cu[:, SELL] = -SELL_FRACTION * dt * fc.c_el
    if recovery:
        cost[-N:] = model.recovery_penalty * dt
    return LpProblem(cost, A, row_lo, row_up, lb, ub)


def _planning_cost(lp: LpProblem, N: int) -> LpProblem:
    """Scale-free, tie-broken objective used to pick a unique plan."""
    scale = float(np.abs(lp.cost).max())
    c = np.round(lp.cost / scale, COST_DECIMALS) if scale > 0 else np.zeros_like(lp.cost)
    w = TIE_BREAK * (1.0 + np.arange(N) / N)
    c[: N_INPUTS * N] += np.repeat(w, N_INPUTS)
    return LpProblem(c, lp.A, lp.row_lo, lp.row_up, lp.lb, lp.ub)


def _unpack(lp: LpProblem, x: np.ndarray, N: int, recovery: bool) -> OcpSolution:
    nu = N_INPUTS * N
    u = x[:nu].reshape(N, N_INPUTS)
    xs = x[nu: nu + 2 * (N + 1)].reshape(N + 1, 2)
    slack = x[nu + 2 * (N + 1):] if recovery else None
    return OcpSolution(u=u, x=xs, open_loop_cost=float(lp.cost @ x), slack=slack, recovery=recovery)


def plan(x_i: SystemState, forecast: GridSignals, p: SizingParams, pc: ControllerParams,
         model: Model) -> OcpSolution:
    """Solve one horizon; fall back to soft comfort bounds if the hard OCP is infeasible."""
    for recovery in (False, True):
        if recovery and not model.allow_recovery:
            break
        lp = transcribe(x_i, forecast, p, pc, model, recovery=recovery)
        sol = solve_lp(_planning_cost(lp, pc.N), FEAS_TOL, method=model.lp_method)
        if sol.status == OPTIMAL:
            out = _unpack(lp, sol.x, pc.N, recovery)
            out.iterations = sol.iterations
            return out
        if sol.status != INFEASIBLE:
            raise LpStallError(f"horizon LP {sol.status}", sol.iterations)
    raise PlanInfeasible("OCP infeasible" + ("" if model.allow_recovery else " (recovery disabled)"))


# ---------------------------------------------------------------------------
# Closed loop


def interval_costs(inputs: np.ndarray, c_el: np.ndarray, c_em: np.ndarray, dt_h: float,
                   assets: AssetParams) -> np.ndarray:
    """Stage-cost integral of each interval under held inputs and held prices."""
    return dt_h * (c_el * (inputs[:, BUY] - SELL_FRACTION * inputs[:, SELL])
                   + assets.carbon_price_per_kg * c_em * inputs[:, BUY])


def samples_in(span_hours: float, pc: ControllerParams) -> int:
    m = Fraction(span_hours).limit_denominator(10**6) * 60 / pc.T_s
    if m.denominator != 1 or m < 1:
        raise ValueError(f"span {span_hours} h is not a positive multiple of T_s={float(pc.T_s)} min")
    return int(m)


def closed_loop(x0: SystemState, series: ExogenousSeries, p: SizingParams, pc: ControllerParams,
                span_hours: float, model: Model | None = None, start_min: float = 0.0) -> ClosedLoopResult:
    """Receding-horizon simulation over ``span_hours`` with perfect forecasts."""
    model = model or Model()
    p.check(model)
    t0 = time.perf_counter()
    M = samples_in(span_hours, pc)
    n_s, N = pc.n_s, pc.N
    grid = series.grid(start_min, pc.T_d, (M - 1) * n_s + N)
    K = M * n_s
    dt = pc.T_d_h
    inputs = np.empty((K, N_INPUTS))
    states = np.empty((K + 1, 2))
    states[0] = (x0.T, x0.SoC)
    V = np.empty(M)
    max_slack = 0.0
    recovery_samples = 0
    co = model.coeffs
    x = x0
    for i in range(M):
        fc = grid.window(i * n_s, N)
        try:
            sol = plan(x, fc, p, pc, model)
        except (PlanInfeasible, LpStallError, TranscriptionError) as exc:
            raise ClosedLoopError(i, exc) from exc
        u = sol.u[:n_s]
        if sol.recovery:
            recovery_samples += 1
            max_slack = max(max_slack, sol.max_slack)
        k = i * n_s
        inputs[k: k + n_s] = u
        states[k: k + n_s + 1] = euler_rollout(x, u, fc.T_e[:n_s], dt, co, model.assets)
        V[i] = interval_costs(u, fc.c_el[:n_s], fc.c_em[:n_s], dt, model.assets).sum()
        x = SystemState(T=float(states[k + n_s, 0]), SoC=float(states[k + n_s, 1]))
    T = states[1:, 0]
    comfort = float(max(np.max(model.T_lo - T, initial=0.0), np.max(T - model.T_hi, initial=0.0)))
    soc = float(max(np.max(-states[:, 1], initial=0.0),
                    np.max(states[:, 1] - p.battery_kwh, initial=0.0)))
    return ClosedLoopResult(inputs=inputs, states=states, V_cl=V, c_el=grid.c_el[:K].copy(),
                            c_em=grid.c_em[:K].copy(), dt_h=dt, n_s=n_s, comfort_violation=comfort,
                            soc_violation=soc, max_slack=max_slack,
                            recovery_samples=recovery_samples, wall_time=time.perf_counter() - t0,
                            start_min=float(start_min))


def save_closed_loop(result: ClosedLoopResult, path) -> None:
    """One row per grid point; inputs and price are blank on the final point."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "T", "SoC", *INPUT_NAMES, "c_el", "sample"])
        K = len(result.inputs)
        t0 = result.start_min / 60.0
        for k in range(K + 1):
            t = t0 + k * result.dt_h
            row = [repr(float(t)), repr(float(result.states[k, 0])), repr(float(result.states[k, 1]))]
            if k < K:
                row += [repr(float(v)) for v in result.inputs[k]]
                row += [repr(float(result.c_el[k])), k // result.n_s]
            else:
                row += [""] * (N_INPUTS + 1) + [math.ceil(K / result.n_s)]
            w.writerow(row)
