import numpy as np
import pytest

from counterdyna.building_sim import EnvConfig
from counterdyna.dyna import (DynaSchedule, ExperienceStore, _rollout_groups, align_training_window, run_counter_dyna,
                              run_model_free)
from counterdyna.errors import ConfigError, ProtocolError
from counterdyna.ppo import PpoHyper
from counterdyna.surrogate import CsmHyper, SyntheticRollout
from conftest import random_policy, run_episodes

TINY_PPO = PpoHyper(hidden=(16,), n_epochs=2)
TINY_CSM = CsmHyper(hidden=(16,), epochs=20)


def test_schedule_rollout_count():
    assert DynaSchedule(5).k_per_episode == 140
    assert DynaSchedule(5, synth_ratio=10, rollout_len=6).k_per_episode == 280
    assert DynaSchedule(5, synth_ratio=0).k_per_episode == 0


def test_schedule_rejects_fractional_k():
    with pytest.raises(ConfigError):
        DynaSchedule(5, synth_ratio=1, rollout_len=5)
    with pytest.raises(ConfigError):
        DynaSchedule(5, rollout_len=168)
    with pytest.raises(ConfigError):
        DynaSchedule(-1)


def test_schedule_long_rollouts_are_valid():
    # L = 96 still leaves T - L - 1 >= 0 anchor offsets
    assert DynaSchedule(5, rollout_len=96, synth_ratio=100).k_per_episode == 175


def test_rollout_groups():
    assert _rollout_groups(140, 24, 168, 21) == [7] * 20
    assert _rollout_groups(0, 24, 168, 21) == []
    assert sum(_rollout_groups(175, 96, 168, 21)) == 175
    assert _rollout_groups(15, 24, 168, 21) == [7, 7, 1]
    # a 6-step leftover is below the minibatch size and is folded into the previous group
    assert _rollout_groups(57, 6, 168, 21) == [28, 29]


def test_align_training_window():
    assert align_training_window(5, 9360) == 9360 - 5 * 168
    assert align_training_window(0, 9360) == 9360
    assert align_training_window(50, 9360) == 960
    with pytest.raises(IndexError):
        align_training_window(60, 9360)


def test_store_enforces_chronology(random_episodes):
    store = ExperienceStore()
    store.add_env_episode(random_episodes[0])
    with pytest.raises(ProtocolError):
        store.add_env_episode(random_episodes[2])
    store.add_env_episode(random_episodes[1])
    assert store.n_env_transitions == 336
    bad = SyntheticRollout(5, 0, np.zeros(3), np.zeros((3, 18)), np.zeros(2, int), np.zeros(2), np.zeros(2))
    with pytest.raises(ProtocolError):
        store.add_rollouts([bad])


def test_store_round_trip(tmp_path, random_episodes):
    store = ExperienceStore()
    for ep in random_episodes:
        store.add_env_episode(ep)
    store.save_env(tmp_path / "d.npz")
    back = ExperienceStore.load_env(tmp_path / "d.npz")
    for a, b in zip(store.env_episodes, back.env_episodes):
        assert np.array_equal(a.zone, b.zone) and np.array_equal(a.disturbances, b.disturbances)
        assert np.array_equal(a.actions, b.actions) and a.start_step == b.start_step


@pytest.fixture(scope="module")
def small_cd_run(year_series):
    return run_counter_dyna(year_series, DynaSchedule(2), TINY_PPO, TINY_CSM, seed=3, start_step=24 * 20)


def test_buffer_accounting(small_cd_run):
    r = small_cd_run
    assert r.store.n_env_transitions == 2 * 168
    assert r.store.n_model_transitions == 2 * 140 * 24
    assert r.store.n_model_transitions / r.store.n_env_transitions == 20
    assert [row["synth_steps_so_far"] for row in r.learning_curve] == [3360, 6720]
    assert [row["real_steps_so_far"] for row in r.learning_curve] == [168, 336]
    # one real update plus 20 synthetic updates per episode
    sources = [d["source"] for d in r.diagnostics]
    assert sources == (["real"] + ["synthetic"] * 20) * 2


def test_real_steps_are_chronological(small_cd_run):
    steps = np.array(small_cd_run.real_global_steps)
    assert steps[0] == 24 * 20
    assert np.all(np.diff(steps) == 1)


def test_rollouts_replay_history(small_cd_run):
    eps = small_cd_run.store.env_episodes
    for r in small_cd_run.store.model_rollouts[::37]:
        src = eps[r.source_episode]
        assert 0 <= r.start_offset <= 168 - 24 - 1
        assert np.array_equal(r.disturbances, src.disturbances[r.start_offset:r.start_offset + 25])
        assert r.zone[0] == src.zone[r.start_offset]


def test_rollouts_only_reference_seen_episodes(small_cd_run):
    # rollouts of episode n are generated before episode n+1 exists
    per = 140
    for i, r in enumerate(small_cd_run.store.model_rollouts):
        assert r.source_episode <= i // per


def test_zero_ratio_matches_model_free(year_series):
    cd = run_counter_dyna(year_series, DynaSchedule(3, synth_ratio=0), TINY_PPO, TINY_CSM, seed=5, start_step=500)
    mf = run_model_free(year_series, 3, TINY_PPO, seed=5, start_step=500)
    assert cd.learning_curve == mf.learning_curve
    assert all(np.array_equal(p, q) for p, q in zip(cd.nets.params(), mf.nets.params()))


def test_runs_are_deterministic(year_series):
    def go():
        return run_counter_dyna(year_series, DynaSchedule(1, synth_ratio=2), TINY_PPO, TINY_CSM, seed=9,
                                start_step=1000)

    a, b = go(), go()
    assert a.learning_curve == b.learning_curve
    assert all(np.array_equal(p, q) for p, q in zip(a.nets.params(), b.nets.params()))


def test_learning_curve_rows(tmp_path, year_series):
    r = run_model_free(year_series, 4, TINY_PPO, seed=0, start_step=0)
    assert [row["episode"] for row in r.learning_curve] == [1, 2, 3, 4]
    r.write_learning_curve(tmp_path / "lc.csv")
    lines = (tmp_path / "lc.csv").read_text().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("episode,mean_episodic_reward")


def test_episode_length_mismatch_rejected(year_series):
    with pytest.raises(ConfigError):
        run_counter_dyna(year_series, DynaSchedule(1), TINY_PPO, TINY_CSM, env_config=EnvConfig(episode_len=24))


def test_zone_state_carries_across_episodes(small_cd_run):
    eps = small_cd_run.store.env_episodes
    assert eps[1].zone[0] == eps[0].zone[-1]


def test_helper_episodes_are_chronological(year_series):
    eps = run_episodes(year_series, 2, random_policy(0.5), start_step=100)
    assert eps[1].start_step == eps[0].start_step + 168
