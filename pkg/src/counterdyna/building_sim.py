"""The real environment: a 1R1C thermal zone heated by an on/off heat pump.

Episodes run in strict chronological order over the exogenous series. By
default the zone temperature is carried across episode boundaries the way a
deployed controller would see it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kpi
from .errors import NumericError, ProtocolError
from .exogenous import (DISTURBANCE_DIM, N_FORECAST, N_TIME_FEATURES, DisturbanceVector, ExogenousSeries, TimeIndex,
                        disturbance_array)

STATE_DIM = 1 + DISTURBANCE_DIM
TRAJECTORY_COLUMNS = ("global_step", "episode", "t", "zone_K", "ambient_K", "price", "action",
                      "power_kw", "reward")


@dataclass(frozen=True)
class PlantParams:
    C_zone: float = 7.2e6  # J/K
    R_env: float = 1.0 / 55.0  # K/W
    hp_thermal_kw: float = 4.0
    cop_base: float = 3.0  # COP at 0 degC ambient
    cop_slope: float = 0.08  # per K
    floor_area_m2: float = 50.0
    internal_gain_kw: float = 0.3

    def __post_init__(self):
        for name in ("C_zone", "R_env", "hp_thermal_kw", "floor_area_m2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def time_constant_hours(self) -> float:
        return self.C_zone * self.R_env / 3600.0

    def cop(self, ambient: float) -> float:
        return max(1.0, self.cop_base + self.cop_slope * (ambient - 273.15))

    def check_stability(self, dt: float, n_substeps: int = 1) -> None:
        ratio = dt / n_substeps / (self.C_zone * self.R_env)
        if not ratio < 1.0:
            raise ValueError(f"explicit Euler unstable: dt/(C*R) = {ratio:.3f} >= 1")


def plant_step(params: PlantParams, zone_temp: float, ambient: float, action: float, dt: float,
               n_substeps: int = 1) -> tuple[float, float]:
    """Advance the zone by ``dt`` seconds; returns (next zone temperature, electric kW)."""
    if not (math.isfinite(zone_temp) and math.isfinite(ambient) and math.isfinite(action)
            and math.isfinite(dt)):
        raise NumericError(f"non-finite plant input: z={zone_temp}, amb={ambient}, a={action}, dt={dt}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    heat_w = 1000.0 * (params.internal_gain_kw + action * params.hp_thermal_kw)
    h = dt / n_substeps
    z = zone_temp
    for _ in range(n_substeps):
        z = z + h / params.C_zone * ((ambient - z) / params.R_env + heat_w)
    power = action * params.hp_thermal_kw / params.cop(ambient)
    return z, power


@dataclass(frozen=True)
class EnvState:
    zone_temp: float
    disturbances: np.ndarray  # 18-vector, see exogenous.disturbance_array

    @property
    def disturbance_vector(self) -> DisturbanceVector:
        return DisturbanceVector.from_array(self.disturbances)

    @property
    def price(self) -> float:
        return float(self.disturbances[N_TIME_FEATURES + N_FORECAST])

    @property
    def ambient(self) -> float:
        return float(self.disturbances[N_TIME_FEATURES])

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.zone_temp], self.disturbances])


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: int
    next_state: EnvState
    reward: float
    global_step: int = 0
    power_kw: float = 0.0
    discomfort_kh: float = 0.0
    cost_eur_m2: float = 0.0


@dataclass
class EnvClock:
    global_step: int
    episode_index: int = 0
    step_in_episode: int = 0


@dataclass
class Episode:
    """A real episode stored as arrays; index t covers the transition s_t -> s_{t+1}."""

    zone: np.ndarray  # (T+1,)
    disturbances: np.ndarray  # (T+1, 18)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    power_kw: np.ndarray  # (T,)
    start_step: int
    index: int = 0

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def global_steps(self) -> np.ndarray:
        return self.start_step + np.arange(len(self))

    @property
    def prices(self) -> np.ndarray:
        return self.disturbances[:-1, N_TIME_FEATURES + N_FORECAST]

    @classmethod
    def from_transitions(cls, transitions: list[Transition], index: int = 0) -> "Episode":
        zone = [tr.state.zone_temp for tr in transitions] + [transitions[-1].next_state.zone_temp]
        dist = [tr.state.disturbances for tr in transitions] + [transitions[-1].next_state.disturbances]
        return cls(
            zone=np.array(zone),
            disturbances=np.array(dist),
            actions=np.array([tr.action for tr in transitions], dtype=np.int64),
            rewards=np.array([tr.reward for tr in transitions]),
            power_kw=np.array([tr.power_kw for tr in transitions]),
            start_step=transitions[0].global_step,
            index=index,
        )


def reset_to(clock: EnvClock, series: ExogenousSeries, init_zone: float, check_range: bool = True) -> EnvState:
    """State at the clock's step. Configured starts must be physical; carried-over plant states only finite."""
    if not np.isfinite(init_zone):
        raise NumericError(f"initial zone temperature {init_zone} is not finite")
    if check_range and not 150.0 < init_zone < 350.0:
        raise ValueError(f"initial zone temperature {init_zone} K is not physical")
    return EnvState(float(init_zone), disturbance_array(series, clock.global_step))


@dataclass
class EnvConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    band: kpi.ComfortBand = field(default_factory=kpi.ComfortBand)
    weights: kpi.RewardWeights = field(default_factory=kpi.RewardWeights)
    episode_len: int = 168
    init_zone: float = 294.65
    reset_between_episodes: bool = False
    n_substeps: int = 1


class BuildingEnv:
    """Chronological-episode wrapper around :func:`plant_step`.

    Call :meth:`reset` at the start of every episode and :meth:`step` exactly
    ``episode_len`` times in between.
    """

    def __init__(self, series: ExogenousSeries, config: EnvConfig | None = None, start_step: int = 0):
        self.series = series
        self.config = config or EnvConfig()
        self.dt = series.step_minutes * 60.0
        self.dt_hours = series.step_minutes / 60.0
        self.config.plant.check_stability(self.dt, self.config.n_substeps)
        self.start_step = start_step
        self.clock: EnvClock | None = None
        self.state: EnvState | None = None
        self.ledger = kpi.KpiLedger()
        self.episode_ledgers: list[kpi.KpiLedger] = []
        self._episode_done = True

    @property
    def episode_len(self) -> int:
        return self.config.episode_len

    @property
    def done(self) -> bool:
        return self._episode_done

    def reset(self) -> EnvState:
        """Begin the next chronological episode."""
        if self.clock is None:
            self.clock = EnvClock(self.start_step, 0, 0)
            init = self.config.init_zone
        else:
            if not self._episode_done:
                raise ProtocolError("previous episode is still running")
            self.clock = EnvClock(self.clock.global_step, self.clock.episode_index + 1, 0)
            init = self.config.init_zone if self.config.reset_between_episodes else self.state.zone_temp
        configured = self.clock.episode_index == 0 or self.config.reset_between_episodes
        self.state = reset_to(self.clock, self.series, init, check_range=configured)
        self.ledger = kpi.KpiLedger()
        self._episode_done = False
        return self.state

    def step(self, action: int) -> Transition:
        if self._episode_done or self.clock is None:
            raise ProtocolError("episode finished; call reset() first")
        if action not in (0, 1):
            raise ValueError(f"action must be 0 or 1, got {action}")
        cfg = self.config
        s = self.state
        z_next, power = plant_step(cfg.plant, s.zone_temp, s.ambient, action, self.dt, cfg.n_substeps)
        g = self.clock.global_step
        next_state = EnvState(z_next, disturbance_array(self.series, g + 1))
        d = kpi.discomfort_increment(z_next, cfg.band, self.dt_hours)
        c = kpi.cost_increment(power, s.price, cfg.plant.floor_area_m2, self.dt_hours)
        r = kpi.reward_of_step(z_next, power, s.price, cfg.weights, cfg.band, cfg.plant.floor_area_m2,
                               self.dt_hours)
        tr = Transition(s, int(action), next_state, r, g, power, d, c)
        self.ledger = self.ledger.add_step(d, c)
        self.state = next_state
        self.clock.global_step += 1
        self.clock.step_in_episode += 1
        if self.clock.step_in_episode >= cfg.episode_len:
            self._episode_done = True
            self.episode_ledgers.append(self.ledger)
        return tr


def write_trajectory_csv(path, episodes: list[tuple[int, list[Transition]]]) -> None:
    """Dump ``(episode index, transitions)`` pairs in the trajectory CSV layout."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for ep, transitions in episodes:
            for t, tr in enumerate(transitions):
                w.writerow((tr.global_step, ep, t, repr(tr.next_state.zone_temp), repr(tr.state.ambient),
                            repr(tr.state.price), tr.action, repr(float(tr.power_kw)), repr(float(tr.reward))))


__all__ = [
    "BuildingEnv", "EnvClock", "EnvConfig", "EnvState", "Episode", "PlantParams", "STATE_DIM",
    "TimeIndex", "Transition", "plant_step", "reset_to", "write_trajectory_csv",
]
