"""Annualised investment cost of the battery and PV array."""

from __future__ import annotations

from dataclasses import dataclass

from .thermal import AssetParams


def annuity(y: float, r: float) -> float:
    """Present value of one unit paid yearly for ``y`` years at rate ``r``."""
    if y < 1:
        raise ValueError("lifespan must be >= 1 year")
    if r < 0:
        raise ValueError("interest rate must be non-negative")
    if r == 0:
        return float(y)
    return (1.0 - (1.0 + r) ** (-y)) / r


@dataclass(frozen=True)
class EconomicsSpec:
    """Annualised unit costs in GBP per year: ``c_B`` per kWh, ``c_PV`` per m2."""

    battery_capex: float = 460.0
    pv_capex: float = 325.0
    battery_life: float = 15.0
    pv_life: float = 30.0
    interest: float = 0.02

    def __post_init__(self):
        if self.battery_capex < 0 or self.pv_capex < 0:
            raise ValueError("CAPEX must be non-negative")
        annuity(self.battery_life, self.interest)
        annuity(self.pv_life, self.interest)

    @classmethod
    def from_assets(cls, a: AssetParams) -> EconomicsSpec:
        return cls(a.battery_capex, a.pv_capex, a.battery_life, a.pv_life, a.interest)

    @property
    def c_B(self) -> float:
        return self.battery_capex / annuity(self.battery_life, self.interest)

    @property
    def c_PV(self) -> float:
        return self.pv_capex / annuity(self.pv_life, self.interest)

    def investment(self, p) -> float:
        return self.c_B * p.battery_kwh + self.c_PV * p.pv_m2


def investment(p, econ: EconomicsSpec) -> float:
    return econ.investment(p)
