from __future__ import annotations

import numpy as np
import pytest

from robust_codesign.lp import LpProblem
from robust_codesign.timeseries import SynthConfig, synthesize


def random_lp(rng: np.random.Generator) -> LpProblem:
    """Small LP with a mix of ranged, one-sided, equality and free rows and bounds.

    Row centres are taken around a random point so that most instances are
    feasible; about a fifth are shifted to produce infeasible or unbounded ones.
    """
    inf = np.inf
    n = int(rng.integers(1, 7))
    m = int(rng.integers(0, 9))
    A = np.round(rng.normal(size=(m, n)), 2) * (rng.random((m, n)) < 0.7)
    lb = np.round(rng.uniform(-2, 1, n), 2)
    ub = np.where(rng.random(n) < 0.6, lb + np.round(rng.uniform(0.5, 4, n), 2), inf)
    x0 = lb + rng.uniform(0, 1, n) * np.where(np.isfinite(ub), ub - lb, 2)
    center = A @ x0 + (rng.normal(size=m) * 3 if rng.random() < 0.2 else 0)
    kind = rng.integers(0, 3, size=m)
    lo = np.where(kind != 1, center - rng.uniform(0, 2, m), -inf)
    up = np.where(kind == 0, center + rng.uniform(0, 2, m),
                  np.where(kind == 1, center + rng.uniform(0, 2, m), inf))
    eq = (rng.random(m) < 0.15) & (kind == 0)
    lo = np.where(eq, center, lo)
    up = np.where(eq, center, up)
    c = np.round(rng.normal(size=n), 2)
    return LpProblem(c, A, lo, up, lb, ub)


@pytest.fixture(scope="session")
def week():
    """Eight days at 15 min: a simulated week plus a day of forecast pad."""
    return synthesize(SynthConfig(span_hours=192, start_doy=20), seed=11, name="week")


@pytest.fixture(scope="session")
def two_days():
    return synthesize(SynthConfig(span_hours=72, start_doy=40, price_block=60), seed=5, name="days")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
