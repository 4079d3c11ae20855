"""Experiment configuration: INI file with one section per component.

Every hyperparameter table has a section; missing keys keep their defaults.
``--fast`` shrinks the networks to two hidden layers of 64 units.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .building_sim import EnvConfig, PlantParams
from .errors import ConfigError
from .exogenous import SynthesisProfile
from .kpi import ComfortBand, RewardWeights
from .ppo import PpoHyper
from .surrogate import CsmHyper

FAST_HIDDEN = (64, 64)
HOURS_PER_YEAR = 8760


@dataclass
class SeriesConfig:
    seed: int = 1
    horizon_steps: int = 2 * HOURS_PER_YEAR
    csv: str = ""


@dataclass
class DynaConfig:
    synth_ratio: float = 20.0
    rollout_len: int = 24


@dataclass
class PiConfig:
    kp: float = 1.0
    ki: float = 0.1
    integral_limit: float = 5.0


@dataclass
class TestConfig:
    test_year: int = 1
    period_days: int = 14
    peak_search_days: int = 120
    typical_start_day: int = 108  # Apr 19
    best_run_threshold_kh: float = 30.0
    savings_threshold_kh: float = 100.0


@dataclass
class ExperimentSection:
    runs: tuple[str, ...] = ("counter_dyna-5", "counter_dyna-10", "model_free-10", "model_free-50")
    baselines: tuple[str, ...] = ("pi", "rule_based")
    seeds: tuple[int, ...] = tuple(range(30))
    fast: bool = False
    csm_segments: int = 20


@dataclass
class AblationConfig:
    synth_ratios: tuple[float, ...] = (10.0, 20.0, 30.0, 50.0, 100.0)
    rollout_lens: tuple[int, ...] = (6, 12, 24, 48, 96)
    w_costs: tuple[float, ...] = (10.0, 50.0, 100.0, 200.0, 500.0)
    n_episodes: int = 5
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass
class ExperimentConfig:
    series: SeriesConfig = field(default_factory=SeriesConfig)
    profile: SynthesisProfile = field(default_factory=SynthesisProfile)
    plant: PlantParams = field(default_factory=PlantParams)
    comfort: ComfortBand = field(default_factory=ComfortBand)
    reward: RewardWeights = field(default_factory=RewardWeights)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoHyper = field(default_factory=PpoHyper)
    csm: CsmHyper = field(default_factory=CsmHyper)
    dyna: DynaConfig = field(default_factory=DynaConfig)
    pi: PiConfig = field(default_factory=PiConfig)
    test: TestConfig = field(default_factory=TestConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def env_config(self) -> EnvConfig:
        """EnvConfig with the plant/comfort/reward sections folded in."""
        return dataclasses.replace(self.env, plant=self.plant, band=self.comfort, weights=self.reward)

    def with_fast(self) -> "ExperimentConfig":
        cfg = dataclasses.replace(self)
        cfg.ppo = dataclasses.replace(self.ppo, hidden=FAST_HIDDEN)
        cfg.csm = dataclasses.replace(self.csm, hidden=FAST_HIDDEN)
        cfg.experiment = dataclasses.replace(self.experiment, fast=True)
        return cfg


# sections whose dataclass holds nested objects are flattened to their scalar fields
_SCALAR_TYPES = (bool, int, float, str, tuple)


def _section_fields(obj):
    return [f for f in dataclasses.fields(obj) if isinstance(getattr(obj, f.name), _SCALAR_TYPES)]


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], bool):
                return tuple(_parse(s, default[0], where) for s in items)
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _expand_ranges(raw: str) -> str:
    """Allow ``0-29`` style integer ranges in integer lists."""
    out = []
    for part in raw.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else (part, "")
            if b:
                out.extend(str(i) for i in range(int(a), int(b) + 1))
                continue
        out.append(part)
    return ", ".join(out)


def load_config(path=None, text: str | None = None) -> ExperimentConfig:
    """Read an INI config (from ``path`` or ``text``); unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file {p} not found")
            parser.read(p)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        if not hasattr(cfg, section):
            raise ConfigError(f"unknown config section [{section}]")
        obj = getattr(cfg, section)
        known = {f.name: f for f in _section_fields(obj)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            default = getattr(obj, key)
            if isinstance(default, tuple) and default and isinstance(default[0], int) \
                    and not isinstance(default[0], bool):
                raw = _expand_ranges(raw)
            updates[key] = _parse(raw, default, f"[{section}] {key}")
        try:
            setattr(cfg, section, dataclasses.replace(obj, **updates))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        obj = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        for sf in _section_fields(obj):
            lines.append(f"{sf.name} = {_format(getattr(obj, sf.name))}")
        lines.append("")
    return "\n".join(lines)
