"""Single-zone building, battery, heat pump and PV models.

Units throughout: kW, kWh, hours, degC. Building parameters quoted in kJ are
converted when coefficients are derived.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields, replace

import numpy as np


@dataclass(frozen=True)
class BuildingParams:
    U: float = 0.93195  # W/(m2 K)
    A: float = 82.06959707  # m2
    rho_air: float = 1.225  # kg/m3
    V: float = 224.05  # m3
    C_p_air: float = 1.005  # kJ/(kg K)
    n_ac: float = 1.0  # 1/h
    C_build: float = 15286.6114  # kJ/K
    S_F: float = 89.62  # m2
    u_eH_max: float = 4.0  # kW
    u_CeH_max: float = 6.0  # kW
    Q_HP_max: float = 6.0  # kW thermal

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.C_build <= 0:
            raise ValueError("C_build must be positive")


@dataclass(frozen=True)
class AssetParams:
    m_COP: float = 0.067  # 1/degC
    COP_cool: float = 0.7
    eta_ch: float = 0.88
    eta_ds: float = 0.88
    T_ds: float = 2.0  # h
    u_b_max: float = 30.0  # kW
    u_s_max: float = 30.0  # kW
    SoC_max: float = 60.0  # kWh
    theta1: float = 0.12
    theta2: float = -1.345e-4  # per W/m2
    theta3: float = -3.25e-3  # per degC
    c_CO2: float = 100.0  # GBP/tonne
    battery_capex: float = 460.0  # GBP/kWh
    pv_capex: float = 325.0  # GBP/m2
    battery_life: float = 15.0  # years
    pv_life: float = 30.0  # years
    interest: float = 0.02

    def __post_init__(self):
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_ds <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if self.T_ds <= 0:
            raise ValueError("T_ds must be positive")
        if self.battery_life < 1 or self.pv_life < 1:
            raise ValueError("lifespans must be >= 1 year")

    @property
    def carbon_price_per_kg(self) -> float:
        return self.c_CO2 / 1000.0


@dataclass(frozen=True)
class SystemState:
    T: float
    SoC: float

    def __post_init__(self):
        if self.SoC < -1e-6:
            raise ValueError("SoC must be non-negative")


INPUT_NAMES = ("u_eH", "u_CeH", "u_dch", "u_ch", "u_b", "u_s")


@dataclass(frozen=True)
class ControlInput:
    u_eH: float = 0.0
    u_CeH: float = 0.0
    u_dch: float = 0.0
    u_ch: float = 0.0
    u_b: float = 0.0
    u_s: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in INPUT_NAMES])

    @classmethod
    def from_array(cls, a) -> ControlInput:
        return cls(*(float(x) for x in a))


@dataclass(frozen=True)
class ThermalCoefficients:
    loss: float  # kW/K
    cap: float  # kWh/K

    @property
    def time_constant(self) -> float:
        return self.cap / self.loss


def derive_coefficients(building: BuildingParams) -> ThermalCoefficients:
    loss = (building.U * building.A / 1000.0
            + building.rho_air * building.V * building.C_p_air * building.n_ac / 3600.0)
    cap = building.C_build / 3600.0
    if loss <= 0:
        warnings.warn("building has no heat loss path; thermal model is degenerate", stacklevel=2)
    return ThermalCoefficients(loss=loss, cap=cap)


def cop_heat(T_e, assets: AssetParams):
    """Heat-pump COP, affine in external temperature (3 at 7 degC)."""
    if np.ndim(T_e):
        return assets.m_COP * (np.asarray(T_e) - 7.0) + 3.0
    return assets.m_COP * (T_e - 7.0) + 3.0


def pv_power(I, T_e, S_PV: float, assets: AssetParams):
    """PV output in kW for irradiance ``I`` in W/m2 and panel area ``S_PV`` in m2."""
    p = assets.theta1 * (1.0 + assets.theta2 * np.asarray(I) + assets.theta3 * np.asarray(T_e)) \
        * (np.asarray(I) / 1000.0) * S_PV
    p = np.maximum(p, 0.0)
    return float(p) if np.ndim(p) == 0 else p


def euler_step(x: SystemState, u: ControlInput, T_e: float, dt: float,
               coeffs: ThermalCoefficients, assets: AssetParams) -> SystemState:
    """Advance the state by one explicit Euler step of ``dt`` hours."""
    heat = cop_heat(T_e, assets) * u.u_eH - assets.COP_cool * u.u_CeH
    T = x.T + dt * (heat - coeffs.loss * (x.T - T_e)) / coeffs.cap
    SoC = x.SoC + dt * (assets.eta_ch * u.u_ch - u.u_dch / assets.eta_ds)
    return SystemState(T=T, SoC=SoC)


def euler_rollout(x0: SystemState, inputs: np.ndarray, T_e: np.ndarray, dt: float,
                  coeffs: ThermalCoefficients, assets: AssetParams) -> np.ndarray:
    """Repeated :func:`euler_step` on arrays; returns ``(n + 1, 2)`` rows of (T, SoC)."""
    n = len(inputs)
    out = np.empty((n + 1, 2))
    out[0] = (x0.T, x0.SoC)
    a_T = 1.0 - dt * coeffs.loss / coeffs.cap
    cop = assets.m_COP * (np.asarray(T_e) - 7.0) + 3.0
    for k in range(n):
        u = inputs[k]
        out[k + 1, 0] = (a_T * out[k, 0]
                         + dt * (cop[k] * u[0] - assets.COP_cool * u[1]) / coeffs.cap
                         + dt * coeffs.loss * T_e[k] / coeffs.cap)
        out[k + 1, 1] = out[k, 1] + dt * (assets.eta_ch * u[3] - u[2] / assets.eta_ds)
    return out


def with_overrides(obj, overrides: dict | None):
    return replace(obj, **overrides) if overrides else obj
