"""Counterfactual surrogate model: a zone-temperature delta regressor plus a
piecewise-linear cost model, and the rollout generator that combines them.

Rollouts never predict disturbances. Weather, price and calendar features of
a synthetic step are copied from the real episode the rollout was anchored
in; only the zone temperature is simulated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kpi
from .building_sim import Episode, PlantParams, plant_step
from .errors import FitDegenerateError, ProtocolError
from .exogenous import DISTURBANCE_DIM, N_TIME_FEATURES
from .neural import Mlp, fit_regression, load_mlp, save_mlp

INPUT_DIM = 1 + DISTURBANCE_DIM + 1
AMBIENT_COL = N_TIME_FEATURES
PRICE_COL = N_TIME_FEATURES + 7
RIDGE = 1e-8
MAX_CONDITION = 1e14


@dataclass
class CsmHyper:
    hidden: tuple[int, ...] = (512, 512, 512)
    activation: str = "leaky_relu"
    epochs: int = 500
    batch_size: int = 256
    lr: float = 1e-3
    reward_model_full: bool = False


def _standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-8] = 1.0
    return mean, scale


@dataclass
class BuildingModel:
    net: Mlp
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(INPUT_DIM))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(INPUT_DIM))
    target_scale: float = 1.0
    trained_on_episodes: int = 0
    train_mse: float = float("nan")
    fitted: bool = True

    def _inputs(self, zone, dist, actions) -> np.ndarray:
        zone = np.atleast_1d(np.asarray(zone, dtype=np.float64))
        dist = np.atleast_2d(np.asarray(dist, dtype=np.float64))
        actions = np.atleast_1d(np.asarray(actions, dtype=np.float64))
        X = np.column_stack([zone, dist, actions])
        return (X - self.input_mean) / self.input_scale

    def predict_batch(self, zone, dist, actions) -> np.ndarray:
        """Next zone temperature for a batch of (z, d, a) rows."""
        if not self.fitted:
            raise ProtocolError("building model has not been fitted")
        delta = self.net.predict(self._inputs(zone, dist, actions))[:, 0] * self.target_scale
        return np.atleast_1d(np.asarray(zone, dtype=np.float64)) + delta

    def save(self, path) -> None:
        save_mlp(self.net, path, input_mean=self.input_mean, input_scale=self.input_scale,
                 target_scale=self.target_scale, trained_on_episodes=self.trained_on_episodes,
                 train_mse=self.train_mse)

    @classmethod
    def load(cls, path) -> "BuildingModel":
        net, extra = load_mlp(path)
        return cls(net, extra["input_mean"], extra["input_scale"], float(extra["target_scale"]),
                   int(extra["trained_on_episodes"]), float(extra["train_mse"]))


class OracleBuildingModel:
    """The true plant behind the building-model interface (for evaluation only)."""

    def __init__(self, params: PlantParams, dt: float = 3600.0, n_substeps: int = 1):
        self.params = params
        self.dt = dt
        self.n_substeps = n_substeps

    def predict_batch(self, zone, dist, actions) -> np.ndarray:
        zone = np.atleast_1d(np.asarray(zone, dtype=np.float64))
        dist = np.atleast_2d(np.asarray(dist, dtype=np.float64))
        actions = np.atleast_1d(actions)
        return np.array([plant_step(self.params, z, d[AMBIENT_COL], a, self.dt, self.n_substeps)[0]
                         for z, d, a in zip(zone, dist, actions)])


def transitions_arrays(episodes: list[Episode]):
    """Stack every real transition: (zone_t, dist_t, action_t, zone_t+1, reward_t)."""
    if not episodes:
        raise ValueError("no real episodes available")
    z = np.concatenate([ep.zone[:-1] for ep in episodes])
    d = np.concatenate([ep.disturbances[:-1] for ep in episodes])
    a = np.concatenate([ep.actions for ep in episodes]).astype(np.float64)
    zn = np.concatenate([ep.zone[1:] for ep in episodes])
    r = np.concatenate([ep.rewards for ep in episodes])
    return z, d, a, zn, r


def fit_building_model(episodes: list[Episode], hyper: CsmHyper | None = None, seed: int = 0) -> BuildingModel:
    """Train a fresh delta-temperature regressor on all real transitions."""
    hyper = hyper or CsmHyper()
    if not episodes:
        raise ValueError("cannot fit a building model on an empty store")
    z, d, a, zn, _ = transitions_arrays(episodes)
    X = np.column_stack([z, d, a])
    mean, scale = _standardizer(X)
    delta = zn - z
    target_scale = float(np.std(delta))
    if target_scale < 1e-8:
        target_scale = 1.0
    rng = np.random.default_rng(seed)
    # zero output layer: an untrained model predicts persistence (delta 0)
    net = Mlp([INPUT_DIM, *hyper.hidden, 1], hyper.activation, rng=rng, output_scale=0.0)
    model = BuildingModel(net, mean, scale, target_scale, trained_on_episodes=len(episodes))
    Xn = (X - mean) / scale
    _, mse = fit_regression(net, Xn, delta / target_scale, epochs=hyper.epochs,
                            batch_size=hyper.batch_size, lr=hyper.lr, seed=seed + 1)
    model.train_mse = mse * target_scale ** 2
    return model


def predict_next_zone(model, z: float, d, a: int) -> float:
    d = d.as_array() if hasattr(d, "as_array") else d
    return float(model.predict_batch([z], [d], [a])[0])


@dataclass
class RewardModel:
    """Cost part of the reward as a function of (a, price, a*price); exactly 0 when a == 0.

    With ``full=True`` the regression target is the whole reward and no
    discomfort term is added back at prediction time.
    """

    beta: np.ndarray = field(default_factory=lambda: np.zeros(4))
    full: bool = False

    def learned(self, a, price) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        price = np.asarray(price, dtype=np.float64)
        lin = self.beta[0] + self.beta[1] * a + self.beta[2] * price + self.beta[3] * a * price
        return np.where(a == 0, 0.0, lin)

    def to_json(self) -> str:
        return json.dumps({"beta": [repr(float(b)) for b in self.beta], "full": self.full})

    @classmethod
    def from_json(cls, text: str) -> "RewardModel":
        obj = json.loads(text)
        return cls(np.array([float(b) for b in obj["beta"]]), bool(obj["full"]))


def fit_reward_coefficients(a, price, target) -> np.ndarray:
    """Least squares for target ~ b0 + b1 a + b2 tau + b3 a tau on rows with a != 0."""
    a = np.asarray(a, dtype=np.float64)
    price = np.asarray(price, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    active = a != 0
    if active.sum() < 4:
        raise FitDegenerateError(f"need at least 4 active-action samples, got {int(active.sum())}")
    aa, pp = a[active], price[active]
    X = np.column_stack([np.ones_like(aa), aa, pp, aa * pp])
    gram = X.T @ X + RIDGE * np.eye(4)
    if not np.isfinite(gram).all() or np.linalg.cond(gram) > MAX_CONDITION:
        raise FitDegenerateError("reward regression is singular beyond ridge damping")
    return np.linalg.solve(gram, X.T @ target[active])


def fit_reward_model(episodes: list[Episode], weights: kpi.RewardWeights | None = None,
                     band: kpi.ComfortBand | None = None, dt_hours: float = 1.0,
                     full: bool = False) -> RewardModel:
    """Fit the cost model on real data.

    The discomfort term is known in closed form from the next zone
    temperature, so it is removed from the target and only the remainder
    (the cost part) is regressed.
    """
    weights = weights or kpi.RewardWeights()
    band = band or kpi.ComfortBand()
    if not episodes:
        raise FitDegenerateError("no real episodes")
    _, d, a, zn, r = transitions_arrays(episodes)
    if full:
        target = r
    else:
        disc = np.array([kpi.discomfort_increment(z, band, dt_hours) for z in zn])
        target = r + weights.w_discomfort * disc
    return RewardModel(fit_reward_coefficients(a, d[:, PRICE_COL], target), full)


def predict_reward(model: RewardModel, a, price, discomfort=0.0, w_discomfort: float = 1.0):
    """Synthetic reward: exact discomfort penalty plus the learned cost part."""
    learned = model.learned(a, price)
    if model.full:
        return learned
    return learned - w_discomfort * np.asarray(discomfort, dtype=np.float64)


@dataclass
class SyntheticRollout:
    source_episode: int
    start_offset: int
    zone: np.ndarray  # (L+1,)
    disturbances: np.ndarray  # (L+1, 18), copied from the source episode
    actions: np.ndarray  # (L,)
    rewards: np.ndarray  # (L,)
    log_probs: np.ndarray  # (L,)

    def __len__(self) -> int:
        return len(self.actions)

    def states(self) -> np.ndarray:
        return np.column_stack([self.zone, self.disturbances])


def _discomfort_vec(zone: np.ndarray, band: kpi.ComfortBand, dt_hours: float) -> np.ndarray:
    return (np.maximum(0.0, band.lower - zone) + np.maximum(0.0, zone - band.upper)) * dt_hours


def generate_rollouts(building_model, reward_model: RewardModel, episodes: list[Episode], policy,
                      L: int, n_rollouts: int, rng: np.random.Generator,
                      band: kpi.ComfortBand | None = None, weights: kpi.RewardWeights | None = None,
                      dt_hours: float = 1.0, sources=None) -> list[SyntheticRollout]:
    """Generate ``n_rollouts`` counterfactual rollouts of ``L`` steps, advanced in lockstep.

    ``policy(states, rng)`` receives raw ``(k, 19)`` states and returns
    ``(actions, log_probs)``. Anchors (episode, offset) are drawn for all
    rollouts first, then actions are drawn step by step. ``sources`` may
    pin the anchors explicitly as ``[(episode_idx, l0), ...]``.
    """
    band = band or kpi.ComfortBand()
    weights = weights or kpi.RewardWeights()
    if not episodes:
        raise ValueError("no real episodes to anchor rollouts on")
    T = min(len(ep) for ep in episodes)
    if L < 1 or L > T - 1:
        raise ValueError(f"rollout length {L} must lie in [1, T-1] = [1, {T - 1}]")
    if sources is None:
        src = rng.integers(0, len(episodes), size=n_rollouts)
        l0 = rng.integers(0, T - L, size=n_rollouts)  # uniform over {0, ..., T-L-1}
    else:
        src = np.array([s for s, _ in sources], dtype=np.int64)
        l0 = np.array([o for _, o in sources], dtype=np.int64)
        n_rollouts = len(src)
    dist = np.stack([episodes[s].disturbances[o:o + L + 1] for s, o in zip(src, l0)])  # (k, L+1, 18)
    zone = np.empty((n_rollouts, L + 1))
    zone[:, 0] = [episodes[s].zone[o] for s, o in zip(src, l0)]
    actions = np.empty((n_rollouts, L), dtype=np.int64)
    rewards = np.empty((n_rollouts, L))
    logp = np.empty((n_rollouts, L))
    for l in range(L):
        states = np.column_stack([zone[:, l], dist[:, l]])
        a, lp = policy(states, rng)
        actions[:, l] = a
        logp[:, l] = lp
        zone[:, l + 1] = building_model.predict_batch(zone[:, l], dist[:, l], a)
        disc = _discomfort_vec(zone[:, l + 1], band, dt_hours)
        rewards[:, l] = predict_reward(reward_model, a, dist[:, l, PRICE_COL], disc, weights.w_discomfort)
    return [SyntheticRollout(int(src[k]), int(l0[k]), zone[k], dist[k], actions[k], rewards[k], logp[k])
            for k in range(n_rollouts)]


def generate_rollout(building_model, reward_model, episodes, policy, L, rng, **kw) -> SyntheticRollout:
    return generate_rollouts(building_model, reward_model, episodes, policy, L, 1, rng, **kw)[0]
