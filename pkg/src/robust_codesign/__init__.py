"""Joint sizing of a dwelling's PV/battery system and tuning of its economic MPC."""

from .codesign import DesignReport, solve_full, solve_pcd, validate
from .economics import EconomicsSpec, annuity, investment
from .empc import ClosedLoopResult, ControllerParams, Model, SizingParams, closed_loop, plan, transcribe
from .lp import LpProblem, LpSolution, solve_lp, vertex_oracle
from .search import Lattice, RiskMeasure, exhaustive, pattern_search, risk
from .thermal import AssetParams, BuildingParams, ControlInput, SystemState
from .timeseries import ExogenousSeries, SynthConfig, load_series, resample, split_subsamples, synthesize

__all__ = [
    "AssetParams", "BuildingParams", "ClosedLoopResult", "ControlInput", "ControllerParams",
    "DesignReport", "EconomicsSpec", "ExogenousSeries", "Lattice", "LpProblem", "LpSolution", "Model",
    "RiskMeasure", "SizingParams", "SynthConfig", "SystemState", "annuity", "closed_loop",
    "exhaustive", "investment", "load_series", "pattern_search", "plan", "resample", "risk",
    "solve_full", "solve_lp", "solve_pcd", "split_subsamples", "synthesize", "transcribe",
    "validate", "vertex_oracle",
]
