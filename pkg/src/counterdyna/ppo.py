"""PPO with a two-way categorical policy (heat pump off/on).

Mechanics follow the usual library defaults: separate policy and value
networks sharing one Adam optimizer, GAE(lambda), per-minibatch advantage
normalization, clipped surrogate, global gradient-norm clipping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .building_sim import STATE_DIM
from .errors import NumericError
from .exogenous import N_FORECAST, N_TIME_FEATURES
from .neural import AdamState, Mlp, adam_step, check_finite, load_mlp, save_mlp


@dataclass
class PpoHyper:
    lr: float = 5e-4
    gamma: float = 0.95
    gae_lambda: float = 0.95
    batch_size: int = 21
    n_steps: int = 168
    n_epochs: int = 10
    clip: float = 0.3
    entropy_coef: float = 0.01
    value_coef: float = 0.25
    max_grad_norm: float = 0.5
    normalize_advantage: bool = True
    hidden: tuple[int, ...] = (128, 128, 128)
    activation: str = "tanh"

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip range must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")


@dataclass
class StateNormalizer:
    """Fixed affine scaling of raw 19-dim states (zone, time, ambient x7, price x7)."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def default(cls, zone_center: float = 295.65, zone_scale: float = 2.0, ambient_center: float = 278.15,
                ambient_scale: float = 8.0, price_center: float = 0.15, price_scale: float = 0.1):
        mean = np.concatenate([[zone_center], np.zeros(N_TIME_FEATURES), np.full(N_FORECAST, ambient_center),
                               np.full(N_FORECAST, price_center)])
        scale = np.concatenate([[zone_scale], np.ones(N_TIME_FEATURES), np.full(N_FORECAST, ambient_scale),
                                np.full(N_FORECAST, price_scale)])
        return cls(mean, scale)

    def __call__(self, states) -> np.ndarray:
        return (np.asarray(states, dtype=np.float64) - self.mean) / self.scale


class PolicyValueNets:
    def __init__(self, hyper: PpoHyper | None = None, rng: np.random.Generator | None = None,
                 normalizer: StateNormalizer | None = None, state_dim: int = STATE_DIM):
        self.hyper = hyper or PpoHyper()
        rng = rng if rng is not None else np.random.default_rng(0)
        h = list(self.hyper.hidden)
        self.policy = Mlp([state_dim, *h, 2], self.hyper.activation, rng=rng, output_scale=0.01)
        self.value = Mlp([state_dim, *h, 1], self.hyper.activation, rng=rng, output_scale=1.0)
        self.normalizer = normalizer or StateNormalizer.default()
        self.opt = AdamState(lr=self.hyper.lr)

    def params(self) -> list[np.ndarray]:
        return self.policy.params() + self.value.params()

    def logits(self, states) -> np.ndarray:
        return self.policy.predict(self.normalizer(np.atleast_2d(states)))

    def values(self, states) -> np.ndarray:
        return self.value.predict(self.normalizer(np.atleast_2d(states)))[:, 0]

    def probs(self, states) -> np.ndarray:
        return softmax(self.logits(states))

    def sample(self, states, rng: np.random.Generator):
        """Batched categorical sampling; returns (actions, log_probs)."""
        return sample_from_logits(self.logits(states), rng)

    def greedy(self, states) -> np.ndarray:
        return np.argmax(self.logits(states), axis=1)

    def save(self, prefix) -> None:
        save_mlp(self.policy, f"{prefix}policy.npz", norm_mean=self.normalizer.mean,
                 norm_scale=self.normalizer.scale)
        save_mlp(self.value, f"{prefix}value.npz")

    @classmethod
    def load(cls, prefix, hyper: PpoHyper | None = None) -> "PolicyValueNets":
        nets = cls.__new__(cls)
        nets.hyper = hyper or PpoHyper()
        nets.policy, extra = load_mlp(f"{prefix}policy.npz")
        nets.value, _ = load_mlp(f"{prefix}value.npz")
        nets.normalizer = StateNormalizer(extra["norm_mean"], extra["norm_scale"])
        nets.opt = AdamState(lr=nets.hyper.lr)
        return nets


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sample_from_logits(logits: np.ndarray, rng: np.random.Generator):
    logits = np.atleast_2d(logits)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite policy logits")
    logp = log_softmax(logits)
    u = rng.random(len(logits))
    actions = (u >= np.exp(logp[:, 0])).astype(np.int64)
    return actions, logp[np.arange(len(actions)), actions]


def sample_action(nets: PolicyValueNets, state, rng: np.random.Generator) -> tuple[int, float]:
    arr = state.as_array() if hasattr(state, "as_array") else np.asarray(state)
    a, lp = nets.sample(arr[None, :], rng)
    return int(a[0]), float(lp[0])


def compute_gae(rewards, values, bootstrap_value: float, gamma: float, lam: float):
    """GAE(lambda) over one segment; ``values[t]`` is V(s_t), ``bootstrap_value`` is V(s_T)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must be aligned")
    n = len(rewards)
    adv = np.zeros(n)
    next_value = bootstrap_value
    running = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


@dataclass
class RolloutBatch:
    states: np.ndarray
    actions: np.ndarray
    log_probs_old: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    source: str = "real"

    def __len__(self) -> int:
        return len(self.actions)


def build_batch(nets: PolicyValueNets, segments, hyper: PpoHyper, source: str = "real") -> RolloutBatch:
    """Assemble a PPO batch from ``(states[L+1], actions[L], log_probs[L], rewards[L])`` segments.

    Each segment ends by time limit rather than termination, so its last
    state's value is used as the bootstrap.
    """
    parts = {k: [] for k in ("s", "a", "lp", "r", "v", "adv", "ret")}
    for states, actions, logps, rewards in segments:
        v = nets.values(states)
        adv, ret = compute_gae(rewards, v[:-1], v[-1], hyper.gamma, hyper.gae_lambda)
        parts["s"].append(states[:-1])
        parts["a"].append(actions)
        parts["lp"].append(logps)
        parts["r"].append(rewards)
        parts["v"].append(v[:-1])
        parts["adv"].append(adv)
        parts["ret"].append(ret)
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    if not np.all(np.isfinite(cat["adv"])):
        raise NumericError("non-finite advantages")
    return RolloutBatch(cat["s"], cat["a"].astype(np.int64), cat["lp"], cat["r"], cat["v"], cat["adv"],
                        cat["ret"], source)


def clipped_surrogate(ratio, adv, clip: float):
    """Per-sample min(rho*A, clip(rho)*A) and the mask of samples whose gradient flows."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - clip, 1 + clip) * adv
    return np.minimum(unclipped, clipped), unclipped <= clipped


def ppo_loss_and_grads(nets: PolicyValueNets, s: np.ndarray, a: np.ndarray, logp_old: np.ndarray,
                       adv: np.ndarray, returns: np.ndarray, hyper: PpoHyper):
    """Loss of one minibatch of normalized states and its gradient w.r.t. ``nets.params()``.

    ``adv`` is used as given (normalize before calling). Returns
    ``(loss, grads, stats)``.
    """
    m = len(a)
    logits = nets.policy.forward(s)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    lp = logp_all[np.arange(m), a]
    log_ratio = lp - logp_old
    ratio = np.exp(log_ratio)
    surr, flows = clipped_surrogate(ratio, adv, hyper.clip)
    entropy = -(p * logp_all).sum(axis=1)
    v = nets.value.forward(s)[:, 0]
    v_err = v - returns

    policy_loss = -float(surr.mean())
    value_loss = float(np.mean(v_err ** 2))
    loss = policy_loss + hyper.value_coef * value_loss - hyper.entropy_coef * float(entropy.mean())
    if not np.isfinite(loss):
        raise NumericError(f"non-finite PPO loss (policy {policy_loss}, value {value_loss})")

    onehot = np.zeros_like(p)
    onehot[np.arange(m), a] = 1.0
    g_lp = -(adv * ratio * flows) / m
    g_logits = g_lp[:, None] * (onehot - p)
    # d(-c2 * mean entropy)/d logits = c2/m * p * (log p + H)
    g_logits += hyper.entropy_coef / m * p * (logp_all + entropy[:, None])
    grads = nets.policy.backward(g_logits)
    grads += nets.value.backward((hyper.value_coef * 2.0 * v_err / m)[:, None])
    stats = {"policy_loss": policy_loss, "value_loss": value_loss, "entropy": float(entropy.mean()),
             "clip_fraction": float(np.mean(np.abs(ratio - 1) > hyper.clip)),
             "approx_kl": float(np.mean((ratio - 1) - log_ratio))}
    return loss, grads, stats


def ppo_update(nets: PolicyValueNets, batch: RolloutBatch, hyper: PpoHyper | None = None,
               rng: np.random.Generator | None = None) -> dict:
    """Run ``n_epochs`` passes of clipped-PPO minibatch updates over ``batch``."""
    hyper = hyper or nets.hyper
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(batch)
    if n < hyper.batch_size:
        raise ValueError(f"batch of {n} samples is smaller than the minibatch size {hyper.batch_size}")
    S = nets.normalizer(batch.states)
    params = nets.params()
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": [], "approx_kl": []}
    for _ in range(hyper.n_epochs):
        order = rng.permutation(n)
        for i in range(0, n, hyper.batch_size):
            idx = order[i:i + hyper.batch_size]
            adv = batch.advantages[idx]
            if hyper.normalize_advantage and len(idx) > 1:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            _, grads, st = ppo_loss_and_grads(nets, S[idx], batch.actions[idx], batch.log_probs_old[idx], adv,
                                              batch.returns[idx], hyper)
            if hyper.max_grad_norm:
                norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
                if norm > hyper.max_grad_norm:
                    grads = [g * (hyper.max_grad_norm / (norm + 1e-6)) for g in grads]
            adam_step(nets.opt, params, grads)
            for k, v in st.items():
                stats[k].append(v)
    check_finite(nets.policy, "policy")
    check_finite(nets.value, "value")
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["mean_reward"] = float(np.mean(batch.rewards))
    out["source"] = batch.source
    return out
