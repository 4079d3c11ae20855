import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from counterdyna.building_sim import BuildingEnv, EnvConfig, Episode
from counterdyna.exogenous import synthesize_series

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[number] = (name, bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name} {detail}")


@pytest.fixture(scope="session")
def year_series():
    return synthesize_series(1, 8760)


@pytest.fixture(scope="session")
def two_year_series():
    return synthesize_series(1, 2 * 8760)


def run_episodes(series, n, policy, start_step=24 * 10, config=None):
    """Roll ``n`` chronological episodes with ``policy(state, rng) -> action``; returns Episode list."""
    env = BuildingEnv(series, config or EnvConfig(), start_step)
    rng = np.random.default_rng(0)
    episodes = []
    for i in range(n):
        state = env.reset()
        trs = []
        while not env.done:
            tr = env.step(policy(state, rng))
            trs.append(tr)
            state = tr.next_state
        episodes.append(Episode.from_transitions(trs, index=i))
    return episodes


def random_policy(p_on=0.5):
    return lambda state, rng: int(rng.random() < p_on)


@pytest.fixture(scope="session")
def random_episodes(year_series):
    return run_episodes(year_series, 3, random_policy(0.45))
