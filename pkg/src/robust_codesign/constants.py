"""Numerical tolerances and fixed conventions shared across the package."""

FEAS_TOL = 1e-8
OPT_TOL = 1e-8

HOURS_PER_YEAR = 8760.0

# sell price as a fraction of the buy price
SELL_FRACTION = 0.9

BATTERY_UNIT_KWH = 1.0
PV_UNIT_M2 = 1.68

# tie-break weight added to normalised EMPC costs so that the LP optimum is unique
TIE_BREAK = 1e-5
# decimals kept when quantising normalised EMPC costs
COST_DECIMALS = 12
