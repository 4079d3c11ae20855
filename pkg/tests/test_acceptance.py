"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 7, 8, 9 and 11 share one fast-profile suite run (5 seeds) that is
computed once per session.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

from conftest import random_policy, record_acceptance, run_episodes
from oracles import finite_difference_grads, gae_brute_force, max_relative_error
from counterdyna.bench.evaluation import evaluate_csm, one_step_reward_r2
from counterdyna.bench.suite import RunSpec, execute_run, run_suite
from counterdyna.bench.suite import test_periods_for as periods_for
from counterdyna.building_sim import DISTURBANCE_DIM, BuildingEnv, EnvConfig, Episode
from counterdyna.config import ExperimentConfig
from counterdyna.dyna import DynaSchedule, ExperienceStore, align_training_window, run_counter_dyna, run_model_free
from counterdyna.kpi import RewardWeights
from counterdyna.neural import Mlp
from counterdyna.ppo import compute_gae
from counterdyna.surrogate import (PRICE_COL, BuildingModel, CsmHyper, RewardModel, fit_building_model,
                                   fit_reward_model, generate_rollouts)

SEEDS = (0, 1, 2, 3, 4)


def fast_config() -> ExperimentConfig:
    cfg = ExperimentConfig().with_fast()
    cfg.experiment = dataclasses.replace(
        cfg.experiment, runs=("counter_dyna-5", "model_free-5", "counter_dyna-10", "model_free-10"),
        seeds=SEEDS, baselines=("pi", "rule_based"))
    return cfg


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_suite")
    t0 = time.perf_counter()
    report = run_suite(fast_config(), out)
    elapsed = time.perf_counter() - t0
    assert report["failures"] == []
    runs = {p.name: json.loads((p / "run.json").read_text()) for p in (out / "runs").iterdir()}
    return out, runs, elapsed


def test_criterion_01_backprop_matches_finite_differences():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        dims = [int(d) for d in rng.integers(1, 6, size=rng.integers(2, 5))]
        net = Mlp(dims, str(rng.choice(["tanh", "leaky_relu"])), rng=rng)
        for b in net.biases:
            b += rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=(4, dims[0]))
        up = rng.normal(size=(4, dims[-1]))
        net.forward(x)
        worst = max(worst, max_relative_error(net.backward(up), finite_difference_grads(net, x, up)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 5
    record_acceptance(1, "gradient oracle", ok, f"max rel err {worst:.2e} in {elapsed:.2f}s")
    assert ok


def test_criterion_02_reward_least_squares_recovers_linear_data():
    rng = np.random.default_rng(7)
    beta = np.array([-0.02, -0.3, 0.5, -1.7])
    t0 = time.perf_counter()
    eps = []
    for i in range(3):
        T = 168
        a = rng.integers(0, 2, T)
        price = rng.uniform(-0.1, 1.2, T + 1)
        dist = np.zeros((T + 1, DISTURBANCE_DIM))
        dist[:, PRICE_COL] = price
        tau = price[:-1]
        r = np.where(a != 0, beta[0] + beta[1] * a + beta[2] * tau + beta[3] * a * tau, 0.0)
        eps.append(Episode(np.full(T + 1, 295.5), dist, a, r, np.zeros(T), i * T, i))
    rm = fit_reward_model(eps)
    tau = np.linspace(-0.2, 1.5, 200)
    truth = beta[0] + beta[1] + (beta[2] + beta[3]) * tau
    err = float(np.max(np.abs(rm.learned(np.ones_like(tau), tau) - truth)))
    elapsed = time.perf_counter() - t0
    ok = err < 1e-6 and elapsed < 1
    record_acceptance(2, "least-squares oracle", ok, f"max prediction err {err:.2e} on a=1 in {elapsed:.3f}s")
    assert ok


def test_criterion_03_gae_matches_brute_force():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        r, v = rng.normal(size=5), rng.normal(size=5)
        boot, gamma, lam = rng.normal(), rng.uniform(0, 0.999), rng.uniform(0, 1)
        adv, _ = compute_gae(r, v, boot, gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - gae_brute_force(r, v, boot, gamma, lam)))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 1
    record_acceptance(3, "GAE oracle", ok, f"max abs err {worst:.1e} in {elapsed:.3f}s")
    assert ok


def test_criterion_04_rollouts_replay_disturbances(year_series):
    t0 = time.perf_counter()
    episodes = run_episodes(year_series, 4, random_policy(0.4), start_step=24 * 30)
    bm = fit_building_model(episodes, CsmHyper(hidden=(32,), epochs=30), seed=0)
    rm = fit_reward_model(episodes)
    rng = np.random.default_rng(0)

    def policy(states, rng):
        return rng.integers(0, 2, len(states)), np.zeros(len(states))

    rollouts = []
    for L in (1, 6, 12, 24, 48, 96, 167):
        rollouts += generate_rollouts(bm, rm, episodes, policy, L, 1000 // 7 + 1, rng)
    rollouts = rollouts[:1000]
    bad_dist = bad_l0 = 0
    for r in rollouts:
        L = len(r)
        src = episodes[r.source_episode]
        if not 0 <= r.start_offset <= len(src) - L - 1:
            bad_l0 += 1
        seg = src.disturbances[r.start_offset:r.start_offset + L + 1]
        if seg.shape != r.disturbances.shape or seg.tobytes() != r.disturbances.tobytes():
            bad_dist += 1
    elapsed = time.perf_counter() - t0
    ok = len(rollouts) == 1000 and bad_dist == 0 and bad_l0 == 0 and elapsed < 10
    record_acceptance(4, "disturbance invariance", ok,
                      f"{len(rollouts)} rollouts, {bad_dist} disturbance mismatches, {bad_l0} bad anchors, "
                      f"{elapsed:.1f}s")
    assert ok


def test_criterion_05_buffer_accounting(two_year_series):
    cfg = ExperimentConfig().with_fast()
    start = align_training_window(5, periods_for(cfg, two_year_series)["peak"].start)
    t0 = time.perf_counter()
    res = run_counter_dyna(two_year_series, DynaSchedule(5), cfg.ppo, cfg.csm, seed=0, start_step=start)
    elapsed = time.perf_counter() - t0
    n_env, n_model = res.store.n_env_transitions, res.store.n_model_transitions
    ok = n_env == 840 and n_model == 16800 and n_model / n_env == 20.0
    record_acceptance(5, "ratio/buffer accounting", ok, f"D_env={n_env} D_model={n_model} in {elapsed:.1f}s")
    assert ok


def test_criterion_06_zero_ratio_equals_model_free(two_year_series, tmp_path):
    cfg = ExperimentConfig().with_fast()
    start = align_training_window(5, periods_for(cfg, two_year_series)["peak"].start)
    t0 = time.perf_counter()
    cd = run_counter_dyna(two_year_series, DynaSchedule(5, synth_ratio=0), cfg.ppo, cfg.csm, seed=11,
                          start_step=start)
    mf = run_model_free(two_year_series, 5, cfg.ppo, seed=11, start_step=start)
    elapsed = time.perf_counter() - t0
    cd.write_learning_curve(tmp_path / "cd.csv")
    mf.write_learning_curve(tmp_path / "mf.csv")
    same_csv = (tmp_path / "cd.csv").read_bytes() == (tmp_path / "mf.csv").read_bytes()
    same_params = all(np.array_equal(p, q) for p, q in zip(cd.nets.params(), mf.nets.params()))
    ok = same_csv and same_params and elapsed < 120
    record_acceptance(6, "degenerate-Dyna equivalence", ok,
                      f"curves identical={same_csv} weights identical={same_params} in {elapsed:.1f}s")
    assert ok


def test_criterion_07_csm_fidelity(suite):
    out, _, _ = suite
    cfg = fast_config()
    env_cfg = cfg.env_config()
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        ckpt = out / "runs" / f"counter_dyna-5-s{seed}" / "checkpoint"
        bm = BuildingModel.load(ckpt / "building_model.npz")
        rm = RewardModel.from_json((ckpt / "reward_model.json").read_text())
        episodes = ExperienceStore.load_env(ckpt / "d_env.npz").env_episodes
        rep = evaluate_csm(bm, rm, episodes, env_cfg, horizon=24, n_segments=50, rng=np.random.default_rng(seed))
        r2 = one_step_reward_r2(bm, rm, episodes, env_cfg)
        rows.append((rep.in_sample_rmse, rep.out_sample_mae, r2))
    elapsed = time.perf_counter() - t0
    arr = np.array(rows)
    ok = bool(np.all(arr[:, 0] < 0.15) and np.all(arr[:, 1] < 2.0) and np.all(arr[:, 2] >= 0.95))
    record_acceptance(7, "CSM fidelity", ok,
                      f"worst over 5 seeds: in-sample RMSE {arr[:, 0].max():.3f} K, out-of-sample MAE "
                      f"{arr[:, 1].max():.3f} K, reward R2 {arr[:, 2].min():.4f} ({elapsed:.1f}s)")
    assert ok


def test_criterion_08_sample_efficiency(suite):
    _, runs, elapsed = suite
    final = {lab: np.array([runs[f"{lab}-s{s}"]["final_episode_reward"] for s in SEEDS])
             for lab in ("counter_dyna-5", "model_free-5", "counter_dyna-10", "model_free-10")}
    wins = int(np.sum(final["counter_dyna-5"] > final["model_free-5"]))
    cd10, mf10 = final["counter_dyna-10"], final["model_free-10"]
    margin = cd10.mean() - mf10.mean()
    pooled_se = float(np.sqrt(cd10.var(ddof=1) / len(cd10) + mf10.var(ddof=1) / len(mf10)))
    ok = wins >= 4 and margin > pooled_se and elapsed < 3600
    record_acceptance(8, "sample efficiency", ok,
                      f"CD-5 beats MF-5 on {wins}/5 seeds; CD-10 - MF-10 = {margin:.3f} vs pooled SE "
                      f"{pooled_se:.3f}; suite {elapsed:.0f}s")
    assert ok


def test_criterion_09_peak_cost_below_pi(suite):
    _, runs, _ = suite
    pi_cost = runs["pi"]["peak_cost_eur_m2"]
    comfortable = [(s, runs[f"counter_dyna-10-s{s}"]) for s in SEEDS
                   if runs[f"counter_dyna-10-s{s}"]["peak_discomfort_kh"] < 30.0]
    beaten = [s for s, r in comfortable if r["peak_cost_eur_m2"] < pi_cost]
    ok = len(beaten) == len(comfortable)
    rb = runs["rule_based"]
    costs = ", ".join(f"s{s}:{r['peak_cost_eur_m2']:.4f}/{r['peak_discomfort_kh']:.1f}Kh" for s, r in comfortable)
    record_acceptance(9, "baseline ordering (peak heating)", ok,
                      f"PI {pi_cost:.4f} EUR/m2 ({runs['pi']['peak_discomfort_kh']:.1f} Kh); "
                      f"rule-based {rb['peak_cost_eur_m2']:.4f} ({rb['peak_discomfort_kh']:.1f} Kh); "
                      f"CD-10 under 30 Kh: {len(comfortable)}/5 [{costs}]; {len(beaten)} cheaper than PI")
    assert ok


def test_criterion_10_return_equals_weighted_kpis(year_series):
    rng = np.random.default_rng(10)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(1, 200))
        weights = RewardWeights(float(rng.uniform(0, 5)), float(rng.uniform(0, 500)))
        cfg = EnvConfig(weights=weights, episode_len=T, init_zone=float(rng.uniform(290, 299)))
        env = BuildingEnv(year_series, cfg, int(rng.integers(0, len(year_series) - T - 8)))
        env.reset()
        p_on = rng.uniform()
        ret = 0.0
        disc = cost = 0.0
        while not env.done:
            tr = env.step(int(rng.random() < p_on))
            ret += tr.reward
            z = tr.next_state.zone_temp
            # independent KPI recomputation from the trajectory
            disc += max(0.0, cfg.band.lower - z) + max(0.0, z - cfg.band.upper)
            cost += tr.state.price * tr.power_kw / cfg.plant.floor_area_m2
        target = -(weights.w_discomfort * env.ledger.discomfort_kh + weights.w_cost * env.ledger.cost_eur_m2)
        worst = max(worst, abs(ret - target), abs(env.ledger.discomfort_kh - disc),
                    abs(env.ledger.cost_eur_m2 - cost))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 5
    record_acceptance(10, "KPI consistency", ok, f"max abs deviation {worst:.1e} over 100 trajectories "
                                                 f"in {elapsed:.2f}s")
    assert ok


def test_criterion_11_repeat_runs_byte_identical(suite, tmp_path):
    out, _, _ = suite
    cfg = fast_config()
    mismatched, compared = [], 0
    t0 = time.perf_counter()
    for spec in (RunSpec("counter_dyna", 5, 2, group="headline"), RunSpec("model_free", 5, 2, group="headline"),
                 RunSpec("pi", group="baseline")):
        execute_run(spec, cfg, tmp_path)
        a_dir, b_dir = out / "runs" / spec.run_id, tmp_path / "runs" / spec.run_id
        for f in sorted(a_dir.rglob("*.csv")):
            compared += 1
            if f.read_bytes() != (b_dir / f.relative_to(a_dir)).read_bytes():
                mismatched.append(str(f.relative_to(out)))
    elapsed = time.perf_counter() - t0
    ok = compared >= 10 and not mismatched
    record_acceptance(11, "determinism", ok, f"{compared} CSV files compared, {len(mismatched)} differ "
                                             f"({elapsed:.1f}s)")
    assert ok, mismatched
