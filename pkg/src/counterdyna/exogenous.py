"""Weather and electricity-price series, perfect forecasts and calendar encoding.

Everything the controller cannot influence lives here. Series are generated
from a seed (or loaded from CSV) and never change afterwards, so a single
instance can be shared by any number of runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import SeriesParseError

FORECAST_HOURS = 6
N_FORECAST = FORECAST_HOURS + 1  # current value + next 6 hours
N_TIME_FEATURES = 4
DISTURBANCE_DIM = N_TIME_FEATURES + 2 * N_FORECAST  # 18

DEFAULT_ORIGIN = datetime(2023, 1, 1)
CSV_HEADER = ("ambient_K", "price_eur_per_kwh")


@dataclass(frozen=True)
class TimeIndex:
    step: int
    step_minutes: int = 60

    def __post_init__(self):
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")
        if self.step_minutes <= 0:
            raise ValueError("step_minutes must be positive")

    def wallclock(self, origin: datetime = DEFAULT_ORIGIN) -> datetime:
        return origin + timedelta(minutes=self.step * self.step_minutes)

    def hour_of_day(self, origin: datetime = DEFAULT_ORIGIN) -> float:
        t = self.wallclock(origin)
        return t.hour + t.minute / 60.0

    def weekday(self, origin: datetime = DEFAULT_ORIGIN) -> int:
        return self.wallclock(origin).weekday()


@dataclass(frozen=True)
class DisturbanceVector:
    time_enc: np.ndarray  # sin/cos hour, sin/cos weekday
    ambient_forecast: np.ndarray  # K, current + 6 h
    price_forecast: np.ndarray  # EUR/kWh, current + 6 h

    @property
    def ambient(self) -> float:
        return float(self.ambient_forecast[0])

    @property
    def price(self) -> float:
        return float(self.price_forecast[0])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.time_enc, self.ambient_forecast, self.price_forecast])

    @classmethod
    def from_array(cls, arr) -> "DisturbanceVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (DISTURBANCE_DIM,):
            raise ValueError(f"expected {DISTURBANCE_DIM} values, got shape {arr.shape}")
        a = N_TIME_FEATURES
        b = a + N_FORECAST
        return cls(arr[:a].copy(), arr[a:b].copy(), arr[b:].copy())


@dataclass(frozen=True)
class SynthesisProfile:
    """Parameters of the synthetic weather/price generator."""

    # ambient, Kelvin
    ambient_mean: float = 283.15
    annual_amplitude: float = 9.0
    coldest_day: float = 24.0
    diurnal_amplitude: float = 3.0
    warmest_hour: float = 15.0
    noise_std: float = 2.0
    noise_corr_hours: float = 36.0
    ambient_bounds: tuple[float, float] = (243.15, 318.15)
    # price, EUR/kWh
    price_base: float = 0.10
    morning_peak: float = 0.08
    morning_hour: float = 8.0
    evening_peak: float = 0.14
    evening_hour: float = 19.0
    peak_width_hours: float = 2.0
    night_discount: float = 0.03
    daily_level_std: float = 0.025
    hourly_noise_std: float = 0.012
    spike_prob: float = 0.015
    spike_mean: float = 0.20
    dip_prob_per_day: float = 0.08
    dip_depth: float = 0.12


@dataclass(frozen=True, eq=False)
class ExogenousSeries:
    ambient: np.ndarray
    price: np.ndarray
    origin: datetime = DEFAULT_ORIGIN
    seed: int | None = None
    step_minutes: int = 60
    _dist_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        amb = np.array(self.ambient, dtype=np.float64)
        pr = np.array(self.price, dtype=np.float64)
        if amb.shape != pr.shape or amb.ndim != 1:
            raise ValueError("ambient and price must be 1-D and of equal length")
        amb.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "ambient", amb)
        object.__setattr__(self, "price", pr)

    def __len__(self) -> int:
        return len(self.ambient)

    @property
    def steps_per_hour(self) -> int:
        return 60 // self.step_minutes

    @property
    def last_valid_step(self) -> int:
        """Largest step whose 6 h forecast still lies inside the series."""
        return len(self) - 1 - FORECAST_HOURS * self.steps_per_hour

    def equals(self, other: "ExogenousSeries") -> bool:
        return (
            np.array_equal(self.ambient, other.ambient)
            and np.array_equal(self.price, other.price)
            and self.step_minutes == other.step_minutes
        )


def _closed_form_ambient(steps: np.ndarray, profile: SynthesisProfile, step_minutes: int,
                         origin: datetime) -> np.ndarray:
    hours = steps * (step_minutes / 60.0) + origin.hour + origin.minute / 60.0
    day_of_year = hours / 24.0 + (origin.timetuple().tm_yday - 1)
    annual = -profile.annual_amplitude * np.cos(2 * np.pi * (day_of_year - profile.coldest_day) / 365.0)
    diurnal = profile.diurnal_amplitude * np.cos(2 * np.pi * (hours - profile.warmest_hour) / 24.0)
    return profile.ambient_mean + annual + diurnal


def synthesize_series(seed: int, horizon_steps: int, profile: SynthesisProfile | None = None,
                      step_minutes: int = 60, origin: datetime = DEFAULT_ORIGIN) -> ExogenousSeries:
    """Generate a seeded ambient/price series of ``horizon_steps`` values.

    Ambient is an annual plus a diurnal sinusoid with AR(1) noise on top.
    Price is a double-peaked daily profile with a random daily level,
    occasional spikes and occasional negative midday dips.
    """
    if horizon_steps <= 0:
        raise ValueError(f"horizon_steps must be positive, got {horizon_steps}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if 60 % step_minutes:
        raise ValueError("step_minutes must divide 60")
    profile = profile or SynthesisProfile()
    rng = np.random.default_rng(seed)
    n = int(horizon_steps)
    steps = np.arange(n, dtype=np.float64)

    ambient = _closed_form_ambient(steps, profile, step_minutes, origin)
    if profile.noise_std > 0:
        phi = math.exp(-(step_minutes / 60.0) / profile.noise_corr_hours)
        innov = rng.standard_normal(n) * profile.noise_std * math.sqrt(1 - phi * phi)
        noise = np.empty(n)
        noise[0] = rng.standard_normal() * profile.noise_std
        for i in range(1, n):
            noise[i] = phi * noise[i - 1] + innov[i]
        ambient = np.clip(ambient + noise, *profile.ambient_bounds)
    else:
        # keep the RNG stream aligned with the noisy branch
        rng.standard_normal(n + 1)

    hours = steps * (step_minutes / 60.0) + origin.hour
    hod = np.mod(hours, 24.0)
    day = (hours // 24).astype(int)
    n_days = int(day[-1]) + 1

    def bump(center):
        d = np.minimum(np.abs(hod - center), 24 - np.abs(hod - center))
        return np.exp(-0.5 * (d / profile.peak_width_hours) ** 2)

    shape = (profile.price_base
             + profile.morning_peak * bump(profile.morning_hour)
             + profile.evening_peak * bump(profile.evening_hour)
             - profile.night_discount * bump(3.0))
    level = 1.0 + profile.daily_level_std / profile.price_base * rng.standard_normal(n_days)
    price = shape * np.clip(level, 0.3, None)[day]
    price = price + profile.hourly_noise_std * rng.standard_normal(n)
    spikes = rng.random(n) < profile.spike_prob
    price = price + spikes * rng.exponential(profile.spike_mean, n)
    dip_days = rng.random(n_days) < profile.dip_prob_per_day
    price = price - profile.dip_depth * dip_days[day] * bump(13.0)

    return ExogenousSeries(ambient=ambient, price=price, origin=origin, seed=seed,
                           step_minutes=step_minutes)


def write_series_csv(series: ExogenousSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for a, p in zip(series.ambient, series.price):
            w.writerow((repr(float(a)), repr(float(p))))


def load_series_csv(path, origin: datetime = DEFAULT_ORIGIN, step_minutes: int = 60) -> ExogenousSeries:
    """Read a two-column ``ambient_K,price_eur_per_kwh`` file (one row per control step)."""
    path = Path(path)
    ambient, price = [], []
    with open(path, newline="") as fh:  # FileNotFoundError propagates
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise SeriesParseError(1, f"expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise SeriesParseError(lineno, f"expected 2 columns, got {len(row)}")
            try:
                a, p = float(row[0]), float(row[1])
            except ValueError:
                raise SeriesParseError(lineno, f"non-numeric value in {row}") from None
            if not (math.isfinite(a) and math.isfinite(p)):
                raise SeriesParseError(lineno, "non-finite value")
            ambient.append(a)
            price.append(p)
    if not ambient:
        raise SeriesParseError(2, "no data rows")
    return ExogenousSeries(ambient=np.array(ambient), price=np.array(price), origin=origin,
                           step_minutes=step_minutes)


def time_encoding(t: TimeIndex, origin: datetime = DEFAULT_ORIGIN) -> np.ndarray:
    hour = t.hour_of_day(origin)
    wd = t.weekday(origin)
    return np.array([
        math.sin(2 * math.pi * hour / 24.0),
        math.cos(2 * math.pi * hour / 24.0),
        math.sin(2 * math.pi * wd / 7.0),
        math.cos(2 * math.pi * wd / 7.0),
    ])


def disturbance_array(series: ExogenousSeries, step: int) -> np.ndarray:
    """The 18-vector d_t at ``step`` (cached; the series is immutable)."""
    cached = series._dist_cache.get(step)
    if cached is not None:
        return cached
    if step < 0 or step > series.last_valid_step:
        raise IndexError(
            f"step {step} outside [0, {series.last_valid_step}] (series length {len(series)})")
    stride = series.steps_per_hour
    idx = step + stride * np.arange(N_FORECAST)
    t = TimeIndex(step, series.step_minutes)
    arr = np.concatenate([time_encoding(t, series.origin), series.ambient[idx], series.price[idx]])
    arr.setflags(write=False)
    series._dist_cache[step] = arr
    return arr


def disturbance_at(series: ExogenousSeries, t: TimeIndex | int) -> DisturbanceVector:
    step = t.step if isinstance(t, TimeIndex) else int(t)
    return DisturbanceVector.from_array(disturbance_array(series, step))
