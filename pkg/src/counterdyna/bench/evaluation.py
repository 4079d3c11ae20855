"""Closed-loop controller evaluation and building-model accuracy checks."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from ..building_sim import BuildingEnv, EnvConfig, Episode, Transition, write_trajectory_csv
from ..exogenous import ExogenousSeries
from ..kpi import KpiLedger
from ..surrogate import (AMBIENT_COL, PRICE_COL, OracleBuildingModel, RewardModel, _discomfort_vec, generate_rollouts,
                         predict_reward)
from .controllers import Controller

CSM_REPORT_COLUMNS = ("rollout_id", "horizon_h", "in_sample", "rmse_K", "mae_K", "reward_r2")


@dataclass(frozen=True)
class TestPeriod:
    name: str
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


def find_test_periods(series: ExogenousSeries, test_year: int = 1, period_days: int = 14,
                      peak_search_days: int = 120, typical_start_day: int = 108) -> dict[str, TestPeriod]:
    """Peak heating = coldest day-aligned fortnight early in ``test_year``; typical = fixed spring fortnight."""
    sph = series.steps_per_hour
    day = 24 * sph
    length = period_days * day
    year0 = test_year * 365 * day
    amb = np.asarray(series.ambient)
    best, best_start = np.inf, None
    for d in range(peak_search_days):
        s = year0 + d * day
        if s + length > len(amb):
            break
        m = amb[s:s + length].mean()
        if m < best:
            best, best_start = m, s
    if best_start is None:
        raise IndexError("series too short to contain the peak-heating test period")
    typical = year0 + typical_start_day * day
    if typical + length > series.last_valid_step + 1:
        raise IndexError("series too short to contain the typical-heating test period")
    return {"peak": TestPeriod("peak", best_start, length), "typical": TestPeriod("typical", typical, length)}


@dataclass
class EvalResult:
    ledger: KpiLedger
    transitions: list[Transition]

    @property
    def total_reward(self) -> float:
        return float(sum(tr.reward for tr in self.transitions))

    def write_trajectory(self, path) -> None:
        write_trajectory_csv(path, [(0, self.transitions)])


def evaluate_controller(controller: Controller, series: ExogenousSeries, env_config: EnvConfig,
                        period: TestPeriod) -> EvalResult:
    """Run one test period closed-loop from the configured initial zone temperature."""
    cfg = dataclasses.replace(env_config, episode_len=period.length)
    env = BuildingEnv(series, cfg, start_step=period.start)
    controller.reset()
    state = env.reset()
    transitions = []
    while not env.done:
        tr = env.step(controller.act(state))
        transitions.append(tr)
        state = tr.next_state
    return EvalResult(env.ledger, transitions)


def _r2(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


@dataclass
class CsmReport:
    rows: list[dict]
    in_sample_rmse: float
    in_sample_mae: float
    out_sample_rmse: float
    out_sample_mae: float
    reward_r2: float
    out_sample_reward_r2: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSM_REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r["rollout_id"], r["horizon_h"], int(r["in_sample"]), repr(r["rmse_K"]),
                            repr(r["mae_K"]), repr(r["reward_r2"])])

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("in_sample_rmse", "in_sample_mae", "out_sample_rmse",
                                              "out_sample_mae", "reward_r2", "out_sample_reward_r2")}


def _replay_policy(actions: np.ndarray):
    """Policy that plays back fixed per-rollout action sequences, one column per step."""
    step = [0]

    def policy(states, rng):
        a = actions[:, step[0]]
        step[0] += 1
        return a, np.zeros(len(a))

    return policy


def true_rewards(zone_next: np.ndarray, actions: np.ndarray, dist: np.ndarray, env_config: EnvConfig,
                 dt_hours: float = 1.0) -> np.ndarray:
    """Environment reward for given post-step zone temperatures and actions."""
    plant = env_config.plant
    amb = dist[..., AMBIENT_COL]
    price = dist[..., PRICE_COL]
    cop = np.maximum(1.0, plant.cop_base + plant.cop_slope * (amb - 273.15))
    power = actions * plant.hp_thermal_kw / cop
    cost = price * power * dt_hours / plant.floor_area_m2
    disc = _discomfort_vec(zone_next, env_config.band, dt_hours)
    return -(env_config.weights.w_discomfort * disc + env_config.weights.w_cost * cost)


def evaluate_csm(building_model, reward_model: RewardModel, episodes: list[Episode], env_config: EnvConfig,
                 horizon: int = 24, n_segments: int = 20, rng: np.random.Generator | None = None,
                 on_probability: float = 0.3, dt: float = 3600.0, out_actions=None) -> CsmReport:
    """Compare CSM rollouts against the real plant from shared operating points.

    In-sample: the historical actions are replayed through the model and
    compared with the recorded zone temperatures. Out-of-sample: a fresh
    random on/off sequence is applied to both the model and the true plant
    starting from the same recorded state. ``out_actions`` overrides the
    random sequence with a callable ``(historical_actions) -> actions``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dt_hours = dt / 3600.0
    T = min(len(ep) for ep in episodes)
    if not 1 <= horizon <= T - 1:
        raise ValueError(f"horizon {horizon} must lie in [1, {T - 1}]")
    src = rng.integers(0, len(episodes), size=n_segments)
    l0 = rng.integers(0, T - horizon, size=n_segments)
    sources = list(zip(src.tolist(), l0.tolist()))
    hist_actions = np.stack([episodes[s].actions[o:o + horizon] for s, o in sources])
    new_actions = (rng.random((n_segments, horizon)) < on_probability).astype(np.int64)
    if out_actions is not None:
        new_actions = np.asarray(out_actions(hist_actions), dtype=np.int64)
    oracle = OracleBuildingModel(env_config.plant, dt, env_config.n_substeps)
    kw = dict(band=env_config.band, weights=env_config.weights, dt_hours=dt_hours, sources=sources)

    model_in = generate_rollouts(building_model, reward_model, episodes, _replay_policy(hist_actions), horizon,
                                 n_segments, rng, **kw)
    model_out = generate_rollouts(building_model, reward_model, episodes, _replay_policy(new_actions), horizon,
                                  n_segments, rng, **kw)
    true_out = generate_rollouts(oracle, reward_model, episodes, _replay_policy(new_actions), horizon,
                                 n_segments, rng, **kw)

    rows = []
    err_in, err_out = [], []
    r_true_in, r_pred_in, r_true_out, r_pred_out = [], [], [], []
    for k, (s, o) in enumerate(sources):
        ep = episodes[s]
        real_z = ep.zone[o + 1:o + horizon + 1]
        real_r = ep.rewards[o:o + horizon]
        e_in = model_in[k].zone[1:] - real_z
        d_out = true_out[k].disturbances
        tr_out = true_rewards(true_out[k].zone[1:], new_actions[k], d_out[:-1], env_config, dt_hours)
        e_out = model_out[k].zone[1:] - true_out[k].zone[1:]
        err_in.append(e_in)
        err_out.append(e_out)
        r_true_in.append(real_r)
        r_pred_in.append(model_in[k].rewards)
        r_true_out.append(tr_out)
        r_pred_out.append(model_out[k].rewards)
        for in_sample, e, rt, rp in ((True, e_in, real_r, model_in[k].rewards),
                                     (False, e_out, tr_out, model_out[k].rewards)):
            rows.append({"rollout_id": k, "horizon_h": horizon * dt_hours, "in_sample": in_sample,
                         "rmse_K": float(np.sqrt(np.mean(e ** 2))), "mae_K": float(np.mean(np.abs(e))),
                         "reward_r2": _r2(rt, rp)})
    err_in = np.concatenate(err_in)
    err_out = np.concatenate(err_out)
    return CsmReport(
        rows=rows,
        in_sample_rmse=float(np.sqrt(np.mean(err_in ** 2))),
        in_sample_mae=float(np.mean(np.abs(err_in))),
        out_sample_rmse=float(np.sqrt(np.mean(err_out ** 2))),
        out_sample_mae=float(np.mean(np.abs(err_out))),
        reward_r2=_r2(np.concatenate(r_true_in), np.concatenate(r_pred_in)),
        out_sample_reward_r2=_r2(np.concatenate(r_true_out), np.concatenate(r_pred_out)),
    )


def one_step_reward_r2(building_model, reward_model: RewardModel, episodes: list[Episode],
                       env_config: EnvConfig, dt_hours: float = 1.0) -> float:
    """R^2 of CSM one-step reward predictions against recorded rewards on the given episodes."""
    z = np.concatenate([ep.zone[:-1] for ep in episodes])
    d = np.concatenate([ep.disturbances[:-1] for ep in episodes])
    a = np.concatenate([ep.actions for ep in episodes])
    r = np.concatenate([ep.rewards for ep in episodes])
    zn = building_model.predict_batch(z, d, a)
    disc = _discomfort_vec(zn, env_config.band, dt_hours)
    pred = predict_reward(reward_model, a, d[:, PRICE_COL], disc, env_config.weights.w_discomfort)
    return _r2(r, pred)
