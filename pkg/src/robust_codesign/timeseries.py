"""Exogenous signal series: CSV ingestion, synthesis, resampling and subsampling.

A series holds the four exogenous signals sampled on a uniform grid:
external temperature ``T_e`` (degC), irradiance ``I`` (W/m2), electricity
price ``c_el`` (GBP/kWh) and grid carbon intensity ``c_em`` (kgCO2e/kWh).
Prices and carbon are zero-order-hold signals; temperature and irradiance
are treated as point samples and interpolated linearly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from fractions import Fraction
from pathlib import Path

import numpy as np

from .constants import HOURS_PER_YEAR

COLUMNS = ("t", "T_e", "I", "c_el", "c_em")
DEFAULT_ORIGIN = "2018-01-01T00:00:00"


class SeriesError(ValueError):
    """Raised for malformed or inconsistent exogenous data."""


def _frac(x) -> Fraction:
    return Fraction(x).limit_denominator(10**6)


@dataclass(frozen=True)
class ExogenousSample:
    t: float
    T_e: float
    I: float
    c_el: float
    c_em: float


@dataclass(frozen=True, eq=False)
class ExogenousSeries:
    """Uniformly sampled exogenous signals.

    ``t`` holds hours from ``origin``; ``resolution`` is the spacing in minutes.
    """

    t: np.ndarray
    T_e: np.ndarray
    I: np.ndarray
    c_el: np.ndarray
    c_em: np.ndarray
    resolution: float
    origin: str = DEFAULT_ORIGIN
    name: str = "series"

    def __post_init__(self):
        arrays = {}
        for col in COLUMNS:
            arr = np.asarray(getattr(self, col), dtype=float)
            arr.setflags(write=False)
            arrays[col] = arr
            object.__setattr__(self, col, arr)
        n = len(arrays["t"])
        if n == 0:
            raise SeriesError("empty series")
        if any(len(a) != n for a in arrays.values()):
            raise SeriesError("column lengths differ")
        if self.resolution <= 0:
            raise SeriesError("resolution must be positive")
        for col, arr in arrays.items():
            if np.isnan(arr).any():
                raise SeriesError(f"NaN values in column {col}")
        if n > 1:
            dt = np.diff(arrays["t"])
            if (dt <= 0).any():
                raise SeriesError("non-monotone timestamps")
            if not np.allclose(dt * 60.0, self.resolution, rtol=0, atol=1e-6):
                raise SeriesError(
                    f"resolution mismatch: spacing {dt[0] * 60.0:g} min, declared {self.resolution:g} min"
                )
        if (arrays["I"] < 0).any():
            raise SeriesError("negative irradiance")
        if (arrays["c_em"] < 0).any():
            raise SeriesError("negative carbon intensity")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> ExogenousSample:
        return ExogenousSample(*(float(getattr(self, c)[i]) for c in COLUMNS))

    @property
    def span_hours(self) -> float:
        return len(self) * self.resolution / 60.0

    @property
    def span_minutes(self) -> Fraction:
        return len(self) * _frac(self.resolution)

    def slice(self, start: int, stop: int, name: str | None = None) -> ExogenousSeries:
        if not 0 <= start < stop <= len(self):
            raise SeriesError(f"slice [{start}, {stop}) outside series of length {len(self)}")
        return ExogenousSeries(
            *(getattr(self, c)[start:stop] for c in COLUMNS),
            resolution=self.resolution,
            origin=self.origin,
            name=name or self.name,
        )

    def replace(self, **columns) -> ExogenousSeries:
        data = {c: columns.get(c, getattr(self, c)) for c in COLUMNS}
        return ExogenousSeries(**data, resolution=self.resolution, origin=self.origin,
                               name=columns.get("name", self.name))

    def as_array(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in COLUMNS])

    def grid(self, start_min, step_min, n: int) -> GridSignals:
        """Sample the series on ``n`` intervals of ``step_min`` starting at ``start_min``.

        Times are minutes from the first sample. ``T_e`` and ``I`` are the
        (interpolated) values at each interval start; ``c_el`` and ``c_em``
        are exact averages of the held signals over each interval.
        """
        start, step, res = _frac(start_min), _frac(step_min), _frac(self.resolution)
        if step <= 0 or n < 1 or start < 0:
            raise SeriesError("invalid grid request")
        denom = math.lcm(start.denominator, step.denominator, res.denominator)
        s_t = int(start * denom)
        d_t = int(step * denom)
        r_t = int(res * denom)
        tau = s_t + d_t * np.arange(n + 1, dtype=np.int64)
        a, b = tau[:-1], tau[1:]
        idx, rem = np.divmod(a, r_t)
        last = (b - 1) // r_t
        need = max(int(last[-1]), int(idx[-1] + (rem[-1] > 0)))
        if need >= len(self):
            raise SeriesError(
                f"forecast too short: grid needs sample {need}, series has {len(self)}"
            )
        frac = rem / r_t
        nxt = np.minimum(idx + 1, len(self) - 1)
        T_e = np.where(rem == 0, self.T_e[idx], self.T_e[idx] + frac * (self.T_e[nxt] - self.T_e[idx]))
        I = np.where(rem == 0, self.I[idx], self.I[idx] + frac * (self.I[nxt] - self.I[idx]))
        c_el = _held_average(self.c_el, a, b, r_t)
        c_em = _held_average(self.c_em, a, b, r_t)
        return GridSignals(T_e=T_e, I=np.maximum(I, 0.0), c_el=c_el, c_em=c_em,
                           dt_h=float(step) / 60.0)


def _held_average(v: np.ndarray, a: np.ndarray, b: np.ndarray, r_t: int) -> np.ndarray:
    i0 = a // r_t
    i1 = (b - 1) // r_t
    single = i0 == i1
    out = v[i0].astype(float)
    if not single.all():
        cum = np.concatenate([[0.0], np.cumsum(v * r_t)])

        def integral(x):
            j = x // r_t
            jj = np.minimum(j, len(v) - 1)
            return cum[j] + (x - j * r_t) * np.where(j < len(v), v[jj], 0.0)

        avg = (integral(b) - integral(a)) / (b - a)
        out = np.where(single, out, avg)
    return out


@dataclass(frozen=True)
class GridSignals:
    """Exogenous signals on a control grid (one entry per interval)."""

    T_e: np.ndarray
    I: np.ndarray
    c_el: np.ndarray
    c_em: np.ndarray
    dt_h: float

    def __len__(self) -> int:
        return len(self.T_e)

    def head(self, n: int) -> GridSignals:
        return GridSignals(self.T_e[:n], self.I[:n], self.c_el[:n], self.c_em[:n], self.dt_h)

    def window(self, start: int, n: int) -> GridSignals:
        sl = slice(start, start + n)
        return GridSignals(self.T_e[sl], self.I[sl], self.c_el[sl], self.c_em[sl], self.dt_h)


# ---------------------------------------------------------------------------
# CSV


def _parse_time(raw: str) -> float | datetime:
    try:
        return float(raw)
    except ValueError:
        try:
            return datetime.fromisoformat(raw)
        except ValueError as exc:
            raise SeriesError(f"unparseable timestamp {raw!r}") from exc


def load_series(path, resolution: float, name: str | None = None) -> ExogenousSeries:
    """Read a CSV with header ``t,T_e,I,c_el,c_em``.

    ``t`` is either an hour offset or an ISO-8601 timestamp; ISO timestamps are
    converted to hours from the first row, which becomes the origin.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise SeriesError(f"missing column(s): {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise SeriesError("empty series")
    times = [_parse_time(r["t"]) for r in rows]
    origin = DEFAULT_ORIGIN
    if isinstance(times[0], datetime):
        if not all(isinstance(x, datetime) for x in times):
            raise SeriesError("mixed timestamp formats")
        origin = times[0].isoformat()
        t = np.array([(x - times[0]).total_seconds() / 3600.0 for x in times])
    else:
        t = np.array(times, dtype=float)
    cols = {}
    for c in COLUMNS[1:]:
        try:
            cols[c] = np.array([float(r[c]) for r in rows])
        except (TypeError, ValueError) as exc:
            raise SeriesError(f"bad value in column {c}") from exc
    return ExogenousSeries(t=t, **cols, resolution=float(resolution), origin=origin,
                           name=name or path.stem)


def save_series(series: ExogenousSeries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in series.as_array():
            w.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# Synthesis


@dataclass(frozen=True)
class WeatherEvent:
    """A temperature/price anomaly superimposed on the synthetic signals."""

    start_h: float
    duration_h: float
    dT: float = 0.0
    price_mult: float = 1.0


@dataclass(frozen=True)
class SynthConfig:
    """Closed-form synthetic generator parameters.

    Temperature::

        T_e(t) = T_mean - T_annual_amp*cos(2*pi*(doy - 15)/365)
                 - T_diurnal_amp*cos(2*pi*(hour - 3)/24) + T_noise*U(-1, 1)

    Irradiance is a half-sine between ``daylight`` hours scaled by a seasonal
    peak ``I_peak*(1 - I_season*cos(2*pi*(doy - 172)/365))`` (so that the
    peak is reached at midsummer) and a cloud factor ``U(1 - cloudiness, 1)``
    drawn once per day; it is exactly zero outside the window.

    Price per block of ``price_block`` minutes::

        c_el = max(price_floor, price_mean + price_spread*(profile(hour) + price_noise*U(-1, 1)))

    with ``profile`` in [-0.5, 0.5] peaking at 17:30. Carbon uses the same
    blocks: ``carbon_mean + carbon_amp*cos(2*pi*(hour - 18)/24) + carbon_noise*U(-1, 1)``,
    clipped at zero.
    """

    span_hours: float = 168.0
    resolution: float = 15.0
    start_doy: float = 0.0
    T_mean: float = 10.0
    T_annual_amp: float = 7.0
    T_diurnal_amp: float = 4.0
    T_noise: float = 0.5
    I_peak: float = 600.0
    I_season: float = 0.5
    daylight: tuple[float, float] = (8.0, 16.0)
    cloudiness: float = 0.5
    price_mean: float = 0.15
    price_spread: float = 0.2
    price_noise: float = 0.2
    price_block: float = 15.0
    price_floor: float = 0.01
    carbon_mean: float = 0.2
    carbon_amp: float = 0.05
    carbon_noise: float = 0.02
    events: tuple[WeatherEvent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.span_hours <= 0:
            raise SeriesError("zero-length span")
        for name in ("T_annual_amp", "T_diurnal_amp", "T_noise", "I_peak", "price_spread",
                     "price_noise", "carbon_amp", "carbon_noise", "cloudiness"):
            if getattr(self, name) < 0:
                raise SeriesError(f"negative amplitude {name}")
        if not 0 <= self.I_season <= 1:
            raise SeriesError("I_season must lie in [0, 1]")
        ratio = self.price_block / self.resolution
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise SeriesError("price_block must be a multiple of resolution")
        if self.events and not isinstance(self.events[0], WeatherEvent):
            object.__setattr__(self, "events", tuple(WeatherEvent(**e) for e in self.events))

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        d = dict(d)
        if "daylight" in d:
            d["daylight"] = tuple(d["daylight"])
        if "events" in d:
            d["events"] = tuple(WeatherEvent(**e) for e in d["events"])
        return cls(**d)


def price_profile(hour: np.ndarray) -> np.ndarray:
    """Diurnal price shape in [-0.5, 0.5]: night trough, early-evening peak."""
    return 0.5 * np.cos(2 * np.pi * (hour - 17.5) / 24.0)


def synthesize(gen: SynthConfig, seed: int, name: str = "synthetic") -> ExogenousSeries:
    rng = np.random.default_rng(seed)
    n = int(round(gen.span_hours * 60.0 / gen.resolution))
    if n < 1:
        raise SeriesError("zero-length span")
    t = np.arange(n) * gen.resolution / 60.0
    hour = np.mod(t, 24.0)
    doy = gen.start_doy + t / 24.0

    T_e = (gen.T_mean - gen.T_annual_amp * np.cos(2 * np.pi * (doy - 15.0) / 365.0)
           - gen.T_diurnal_amp * np.cos(2 * np.pi * (hour - 3.0) / 24.0)
           + gen.T_noise * rng.uniform(-1.0, 1.0, n))

    d0, d1 = gen.daylight
    day_idx = np.floor(t / 24.0).astype(int)
    cloud = rng.uniform(1.0 - gen.cloudiness, 1.0, day_idx.max() + 1)[day_idx]
    peak = gen.I_peak * (1.0 - gen.I_season * np.cos(2 * np.pi * (doy - 172.0) / 365.0))
    inside = (hour > d0) & (hour < d1)
    shape = np.where(inside, np.sin(np.pi * (hour - d0) / (d1 - d0)), 0.0)
    I = np.maximum(peak * shape * cloud, 0.0)
    I[~inside] = 0.0

    per_block = int(round(gen.price_block / gen.resolution))
    n_blocks = -(-n // per_block)
    block_t = np.arange(n_blocks) * gen.price_block / 60.0
    block_hour = np.mod(block_t, 24.0)
    price_u = rng.uniform(-1.0, 1.0, n_blocks)
    c_el_b = gen.price_mean + gen.price_spread * (price_profile(block_hour) + gen.price_noise * price_u)
    c_em_b = (gen.carbon_mean + gen.carbon_amp * np.cos(2 * np.pi * (block_hour - 18.0) / 24.0)
              + gen.carbon_noise * rng.uniform(-1.0, 1.0, n_blocks))
    for ev in gen.events:
        on = (block_t >= ev.start_h) & (block_t < ev.start_h + ev.duration_h)
        c_el_b = np.where(on, c_el_b * ev.price_mult, c_el_b)
        T_e = np.where((t >= ev.start_h) & (t < ev.start_h + ev.duration_h), T_e + ev.dT, T_e)
    c_el_b = np.maximum(c_el_b, gen.price_floor)
    c_em_b = np.maximum(c_em_b, 0.0)
    c_el = np.repeat(c_el_b, per_block)[:n]
    c_em = np.repeat(c_em_b, per_block)[:n]
    return ExogenousSeries(t=t, T_e=T_e, I=I, c_el=c_el, c_em=c_em,
                           resolution=gen.resolution, name=name)


# ---------------------------------------------------------------------------
# Resampling


def resample(series: ExogenousSeries, target: float) -> ExogenousSeries:
    """Change the sampling resolution.

    Refining holds prices/carbon and linearly interpolates ``T_e``/``I``
    (the final sample is held). Coarsening keeps the first price/carbon
    value of each block and averages ``T_e``/``I``.
    """
    res = _frac(series.resolution)
    tgt = _frac(target)
    if tgt == res:
        return series
    n = len(series)
    if res % tgt == 0:
        f = int(res / tgt)
        pos = np.arange(n * f) / f
        base = np.arange(n)
        T_e = np.interp(pos, base, series.T_e)
        I = np.interp(pos, base, series.I)
        c_el = np.repeat(series.c_el, f)
        c_em = np.repeat(series.c_em, f)
        t = series.t[0] + np.arange(n * f) * float(tgt) / 60.0
    elif tgt % res == 0:
        f = int(tgt / res)
        m = n // f
        if m == 0:
            raise SeriesError("series shorter than one coarse block")
        cut = m * f
        T_e = series.T_e[:cut].reshape(m, f).mean(axis=1)
        I = series.I[:cut].reshape(m, f).mean(axis=1)
        c_el = series.c_el[:cut:f]
        c_em = series.c_em[:cut:f]
        t = series.t[:cut:f]
    else:
        raise SeriesError(f"incompatible resolutions {series.resolution} -> {target}")
    return ExogenousSeries(t=t, T_e=T_e, I=I, c_el=c_el, c_em=c_em, resolution=float(tgt),
                           origin=series.origin, name=series.name)


# ---------------------------------------------------------------------------
# Subsamples


@dataclass(frozen=True)
class Subsample:
    """A window of a parent series: ``n_sim`` simulated steps plus ``n_pad`` forecast steps."""

    parent_id: str
    start_index: int
    n_sim: int
    n_pad: int
    weight: float
    resolution: float
    index: int = 0

    @property
    def sim_hours(self) -> float:
        return self.n_sim * self.resolution / 60.0

    @property
    def length(self) -> int:
        return self.n_sim + self.n_pad

    @property
    def start_hour(self) -> float:
        return self.start_index * self.resolution / 60.0

    def data(self, parent: ExogenousSeries) -> ExogenousSeries:
        return parent.slice(self.start_index, self.start_index + self.length,
                            name=f"{self.parent_id}#{self.index}")


def split_subsamples(series: ExogenousSeries, sim_hours: float, horizon_steps: int = 1,
                     stride_hours: float | None = None, horizon_hours: float | None = None,
                     parent_id: str | None = None) -> list[Subsample]:
    """Cut a series into subsamples of ``sim_hours`` plus ``horizon_steps - 1`` pad samples.

    ``horizon_steps`` counts native samples of the prediction horizon; the
    weight ``R_h`` annualises one subsample, ``8760 / sim_hours``. A trailing
    remainder too short for a full subsample is dropped.
    """
    if stride_hours is None:
        stride_hours = sim_hours
    if stride_hours <= 0:
        raise SeriesError("stride must be positive")
    res_h = series.resolution / 60.0
    if horizon_hours is not None:
        horizon_steps = int(math.ceil(horizon_hours / res_h - 1e-9))
    if horizon_steps < 1:
        raise SeriesError("horizon_steps must be >= 1")
    horizon_span = horizon_steps * res_h
    if sim_hours < 2 * horizon_span - 1e-9:
        raise SeriesError("subsample must be at least twice the prediction horizon")
    n_sim = int(round(sim_hours / res_h))
    stride = int(round(stride_hours / res_h))
    if abs(n_sim * res_h - sim_hours) > 1e-9 or abs(stride * res_h - stride_hours) > 1e-9:
        raise SeriesError("sim/stride hours must be multiples of the series resolution")
    pad = horizon_steps - 1
    weight = HOURS_PER_YEAR / (n_sim * res_h)
    out = []
    start = 0
    while start + n_sim + pad <= len(series):
        out.append(Subsample(parent_id or series.name, start, n_sim, pad, weight,
                             series.resolution, index=len(out)))
        start += stride
    if not out:
        raise SeriesError("series shorter than one subsample")
    return out
