"""Counter-Dyna orchestration: real chronological episodes interleaved with
counterfactual model rollouts, plus the model-free baseline loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .building_sim import BuildingEnv, EnvConfig, Episode, Transition
from .errors import ConfigError, FitDegenerateError, ProtocolError
from .exogenous import ExogenousSeries
from .ppo import PolicyValueNets, PpoHyper, StateNormalizer, build_batch, ppo_update
from .surrogate import (BuildingModel, CsmHyper, RewardModel, SyntheticRollout, fit_building_model,
                        fit_reward_model, generate_rollouts)

log = logging.getLogger(__name__)

LEARNING_CURVE_COLUMNS = ("episode", "mean_episodic_reward", "std_within_episode", "real_steps_so_far",
                          "synth_steps_so_far")
DIAGNOSTICS_COLUMNS = ("update_idx", "source", "mean_reward", "policy_loss", "value_loss", "entropy",
                       "clip_fraction")


@dataclass(frozen=True)
class DynaSchedule:
    n_episodes: int
    episode_len: int = 168
    rollout_len: int = 24
    synth_ratio: float = 20.0

    def __post_init__(self):
        if self.n_episodes < 0:
            raise ConfigError("n_episodes must be >= 0")
        if self.synth_ratio < 0:
            raise ConfigError("synth_ratio must be >= 0")
        if self.synth_ratio > 0 and not 1 <= self.rollout_len <= self.episode_len - 1:
            raise ConfigError(f"rollout length {self.rollout_len} must lie in [1, T-1]")
        k = self.synth_ratio * self.episode_len / self.rollout_len
        if abs(k - round(k)) > 1e-9:
            raise ConfigError(f"synth_ratio*T/L = {k} is not an integer number of rollouts")

    @property
    def k_per_episode(self) -> int:
        return int(round(self.synth_ratio * self.episode_len / self.rollout_len))


class ExperienceStore:
    """D_env (real episodes, chronological) and D_model (synthetic rollouts)."""

    def __init__(self):
        self.env_episodes: list[Episode] = []
        self.model_rollouts: list[SyntheticRollout] = []

    def add_env_episode(self, episode: Episode) -> None:
        if self.env_episodes:
            prev = self.env_episodes[-1]
            if episode.start_step != prev.start_step + len(prev):
                raise ProtocolError(
                    f"episode starting at {episode.start_step} does not follow step {prev.start_step + len(prev) - 1}")
        self.env_episodes.append(episode)

    def add_rollouts(self, rollouts: list[SyntheticRollout]) -> None:
        for r in rollouts:
            if not 0 <= r.source_episode < len(self.env_episodes):
                raise ProtocolError(f"rollout references unknown episode {r.source_episode}")
        self.model_rollouts.extend(rollouts)

    @property
    def n_env_transitions(self) -> int:
        return sum(len(ep) for ep in self.env_episodes)

    @property
    def n_model_transitions(self) -> int:
        return sum(len(r) for r in self.model_rollouts)

    def save_env(self, path) -> None:
        eps = self.env_episodes
        with open(path, "wb") as fh:
            np.savez(fh, zone=np.stack([e.zone for e in eps]), disturbances=np.stack([e.disturbances for e in eps]),
                     actions=np.stack([e.actions for e in eps]), rewards=np.stack([e.rewards for e in eps]),
                     power_kw=np.stack([e.power_kw for e in eps]), start_step=np.array([e.start_step for e in eps]))

    @classmethod
    def load_env(cls, path) -> "ExperienceStore":
        store = cls()
        with np.load(path) as d:
            for i in range(len(d["start_step"])):
                store.add_env_episode(Episode(d["zone"][i], d["disturbances"][i], d["actions"][i], d["rewards"][i],
                                              d["power_kw"][i], int(d["start_step"][i]), i))
        return store


@dataclass
class RunResult:
    kind: str
    seed: int
    nets: PolicyValueNets
    store: ExperienceStore
    learning_curve: list[dict] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    episode_ledgers: list = field(default_factory=list)
    real_global_steps: list[int] = field(default_factory=list)
    building_model: BuildingModel | None = None
    reward_model: RewardModel | None = None

    def write_learning_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LEARNING_CURVE_COLUMNS)
            for row in self.learning_curve:
                w.writerow([row["episode"], repr(row["mean_episodic_reward"]), repr(row["std_within_episode"]),
                            row["real_steps_so_far"], row["synth_steps_so_far"]])

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DIAGNOSTICS_COLUMNS)
            for i, d in enumerate(self.diagnostics):
                w.writerow([i, d["source"], repr(d["mean_reward"]), repr(d["policy_loss"]), repr(d["value_loss"]),
                            repr(d["entropy"]), repr(d["clip_fraction"])])


def align_training_window(n_episodes: int, test_start: int, episode_len: int = 168, origin: int = 0) -> int:
    """First training step so that ``n_episodes`` chronological weeks end exactly at ``test_start``."""
    start = test_start - n_episodes * episode_len
    if start < origin:
        raise IndexError(f"{n_episodes} episodes before step {test_start} start before the series origin")
    return start


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "act", "update", "csm", "rollout")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def _run_real_episode(env: BuildingEnv, nets: PolicyValueNets, rng) -> tuple[list[Transition], np.ndarray]:
    state = env.reset()
    transitions, logps = [], []
    for _ in range(env.episode_len):
        a, lp = nets.sample(state.as_array()[None, :], rng)
        tr = env.step(int(a[0]))
        transitions.append(tr)
        logps.append(lp[0])
        state = tr.next_state
    return transitions, np.array(logps)


def _real_phase(result: RunResult, env: BuildingEnv, nets: PolicyValueNets, hyper: PpoHyper, rngs, n: int,
                synth_steps: int) -> Episode:
    transitions, logps = _run_real_episode(env, nets, rngs["act"])
    episode = Episode.from_transitions(transitions, index=n)
    result.store.add_env_episode(episode)
    result.real_global_steps.extend(tr.global_step for tr in transitions)
    result.episode_ledgers.append(env.ledger)
    result.learning_curve.append({
        "episode": n + 1,
        "mean_episodic_reward": float(np.mean(episode.rewards)),
        "std_within_episode": float(np.std(episode.rewards)),
        "real_steps_so_far": result.store.n_env_transitions,
        "synth_steps_so_far": synth_steps,
    })
    states = np.column_stack([episode.zone, episode.disturbances])
    batch = build_batch(nets, [(states, episode.actions, logps, episode.rewards)], hyper, "real")
    result.diagnostics.append(ppo_update(nets, batch, hyper, rngs["update"]))
    return episode


def _rollout_groups(k: int, L: int, n_steps: int, min_batch: int) -> list[int]:
    """Split K rollouts into update groups of ~n_steps synthetic steps each."""
    if k == 0:
        return []
    per = max(1, -(-n_steps // L))
    groups = [per] * (k // per)
    if k % per:
        groups.append(k % per)
    if len(groups) > 1 and groups[-1] * L < min_batch:
        tail = groups.pop()
        groups[-1] += tail
    return groups


def run_counter_dyna(series: ExogenousSeries, schedule: DynaSchedule, ppo_hyper: PpoHyper | None = None,
                     csm_hyper: CsmHyper | None = None, seed: int = 0, env_config: EnvConfig | None = None,
                     start_step: int = 0, normalizer: StateNormalizer | None = None,
                     keep_rollouts: bool = True, kind: str = "counter_dyna") -> RunResult:
    """Train PPO with Counter-Dyna for ``schedule.n_episodes`` chronological real episodes."""
    ppo_hyper = ppo_hyper or PpoHyper()
    csm_hyper = csm_hyper or CsmHyper()
    env_config = env_config or EnvConfig(episode_len=schedule.episode_len)
    if env_config.episode_len != schedule.episode_len:
        raise ConfigError("environment and schedule disagree on the episode length")
    rngs = _streams(seed)
    nets = PolicyValueNets(ppo_hyper, rngs["init"], normalizer)
    env = BuildingEnv(series, env_config, start_step)
    result = RunResult(kind, seed, nets, ExperienceStore())
    K, L = schedule.k_per_episode, schedule.rollout_len
    groups = _rollout_groups(K, L, ppo_hyper.n_steps, ppo_hyper.batch_size)
    synth_steps = 0
    for n in range(schedule.n_episodes):
        _real_phase(result, env, nets, ppo_hyper, rngs, n, synth_steps)
        if K == 0:
            continue
        episodes = result.store.env_episodes
        result.building_model = fit_building_model(episodes, csm_hyper, seed=int(rngs["csm"].integers(2**31)))
        try:
            result.reward_model = fit_reward_model(episodes, env_config.weights, env_config.band, env.dt_hours,
                                                   full=csm_hyper.reward_model_full)
        except FitDegenerateError as exc:
            if result.reward_model is None:
                log.warning("episode %d: reward model fit degenerate (%s); skipping synthetic phase", n + 1, exc)
                continue
            log.warning("episode %d: reward model fit degenerate (%s); keeping previous fit", n + 1, exc)
        for g in groups:
            rollouts = generate_rollouts(result.building_model, result.reward_model, episodes, nets.sample, L, g,
                                         rngs["rollout"], band=env_config.band, weights=env_config.weights,
                                         dt_hours=env.dt_hours)
            if keep_rollouts:
                result.store.add_rollouts(rollouts)
            synth_steps += sum(len(r) for r in rollouts)
            segments = [(r.states(), r.actions, r.log_probs, r.rewards) for r in rollouts]
            result.diagnostics.append(ppo_update(nets, build_batch(nets, segments, ppo_hyper, "synthetic"),
                                                 ppo_hyper, rngs["update"]))
        result.learning_curve[-1]["synth_steps_so_far"] = synth_steps
    return result


def run_model_free(series: ExogenousSeries, n_episodes: int, ppo_hyper: PpoHyper | None = None, seed: int = 0,
                   env_config: EnvConfig | None = None, start_step: int = 0,
                   normalizer: StateNormalizer | None = None, kind: str = "model_free") -> RunResult:
    """Plain PPO on chronological real episodes."""
    ppo_hyper = ppo_hyper or PpoHyper()
    env_config = env_config or EnvConfig()
    rngs = _streams(seed)
    nets = PolicyValueNets(ppo_hyper, rngs["init"], normalizer)
    env = BuildingEnv(series, env_config, start_step)
    result = RunResult(kind, seed, nets, ExperienceStore())
    for n in range(n_episodes):
        _real_phase(result, env, nets, ppo_hyper, rngs, n, 0)
    return result
