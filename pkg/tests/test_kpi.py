import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from counterdyna.kpi import (ComfortBand, KpiLedger, RewardWeights, cost_increment, discomfort_increment,
                             ledger_merge, reward_of_step, slack)

BAND = ComfortBand()
W = RewardWeights()


def test_defaults():
    assert (BAND.lower, BAND.upper) == (294.15, 297.15)
    assert (W.w_discomfort, W.w_cost) == (1.0, 100.0)
    with pytest.raises(ValueError):
        ComfortBand(297.0, 294.0)
    with pytest.raises(ValueError):
        RewardWeights(-1.0, 1.0)


def test_slack_examples():
    assert slack(295.65, BAND) == 0.0
    assert slack(293.15, BAND) == pytest.approx(1.0)
    assert slack(BAND.upper, BAND) == 0.0
    assert slack(BAND.lower, BAND) == 0.0
    assert slack(298.15, BAND) == pytest.approx(1.0)


def test_discomfort_examples():
    assert discomfort_increment(BAND.lower - 0.5, BAND, 2.0) == pytest.approx(1.0)
    assert discomfort_increment(295.0, BAND, 7.3) == 0.0
    assert discomfort_increment(BAND.upper + 2.0, BAND, 0.5) == pytest.approx(1.0)


def test_cost_examples():
    assert cost_increment(0.0, 0.3, 50.0, 1.0) == 0.0
    assert cost_increment(3.0, 0.10, 100.0, 1.0) == pytest.approx(0.003)
    assert cost_increment(2.0, -0.05, 50.0, 1.0) < 0


def test_reward_examples():
    # 0.5 Kh discomfort, 0.01 EUR/m2 cost
    r = reward_of_step(BAND.lower - 0.5, 1.0, 0.5, W, BAND, 50.0, 1.0)
    assert r == pytest.approx(-1.5)
    assert reward_of_step(295.0, 0.0, 0.2, W, BAND, 50.0, 1.0) == 0.0
    base = reward_of_step(295.0, 2.0, 0.2, W, BAND, 50.0, 1.0)
    doubled = reward_of_step(295.0, 2.0, 0.2, RewardWeights(1.0, 200.0), BAND, 50.0, 1.0)
    assert doubled == pytest.approx(2 * base)
    cold = reward_of_step(293.0, 2.0, 0.2, W, BAND, 50.0, 1.0)
    cold_doubled = reward_of_step(293.0, 2.0, 0.2, RewardWeights(1.0, 200.0), BAND, 50.0, 1.0)
    assert cold_doubled - cold == pytest.approx(base)


@given(st.floats(250, 330), st.floats(0, 10), st.floats(0, 2), st.floats(0.1, 2))
def test_reward_nonpositive_for_nonnegative_price(z, power, price, dt):
    assert reward_of_step(z, power, price, W, BAND, 50.0, dt) <= 0.0


def test_ledger_merge_identity_and_commutativity():
    a = KpiLedger(1.5, 0.2, 3)
    b = KpiLedger(0.25, 0.05, 2)
    assert ledger_merge(a, KpiLedger()) == a
    assert ledger_merge(a, b) == ledger_merge(b, a)
    c = KpiLedger(2.0, 1.0, 1)
    m1, m2 = ledger_merge(ledger_merge(a, b), c), ledger_merge(a, ledger_merge(b, c))
    assert m1.steps == m2.steps
    assert m1.discomfort_kh == pytest.approx(m2.discomfort_kh)


def test_two_one_step_ledgers_equal_two_step_trajectory():
    steps = [(293.5, 2.0, 0.3), (297.9, 0.0, 0.1)]
    traj = KpiLedger()
    parts = []
    for z, p, tau in steps:
        d, c = discomfort_increment(z, BAND, 1.0), cost_increment(p, tau, 50.0, 1.0)
        traj = traj.add_step(d, c)
        parts.append(KpiLedger().add_step(d, c))
    merged = ledger_merge(*parts)
    assert merged == traj
    # hand totals: 0.65 K + 0.75 K, 0.3*2/50
    assert traj.discomfort_kh == pytest.approx(1.4)
    assert traj.cost_eur_m2 == pytest.approx(0.012)


@given(st.lists(st.tuples(st.floats(280, 310), st.floats(0, 4), st.floats(-0.2, 1.0)), min_size=1, max_size=50))
def test_return_equals_weighted_totals(rows):
    led = KpiLedger()
    ret = 0.0
    for z, p, tau in rows:
        ret += reward_of_step(z, p, tau, W, BAND, 50.0, 1.0)
        led = led.add_step(discomfort_increment(z, BAND, 1.0), cost_increment(p, tau, 50.0, 1.0))
    assert abs(ret - led.total_reward(W)) < 1e-9


@given(st.lists(st.floats(BAND.lower + 1e-6, BAND.upper - 1e-6), min_size=1, max_size=20),
       st.lists(st.integers(0, 1), min_size=20, max_size=20))
def test_discomfort_invariant_to_actions_in_band(zones, actions):
    totals = [sum(discomfort_increment(z, BAND, 1.0) for z, _ in zip(zones, acts))
              for acts in (actions, [1 - a for a in actions])]
    assert totals[0] == totals[1] == 0.0


def test_discomfort_accumulator_monotone():
    led = KpiLedger()
    prev = 0.0
    for z in np.linspace(285, 305, 40):
        led = led.add_step(discomfort_increment(z, BAND, 1.0), 0.0)
        assert led.discomfort_kh >= prev
        prev = led.discomfort_kh
