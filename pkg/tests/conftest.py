import numpy as np
import pytest

from stratirl.trajectory import AgentRecord, Match, MatchMeta, Tick


def make_match(positions, sides, health=None, match_id="m1", label="assault", arena=340.0,
               interval=3.0, controlled=None):
    """Build a Match from an array of positions shaped (ticks, agents, 2)."""
    positions = np.asarray(positions, dtype=float)
    n_t, n_a, _ = positions.shape
    health = np.ones((n_t, n_a)) if health is None else np.asarray(health, dtype=float)
    ids = [f"{s[0]}{i}" for i, s in enumerate(sides)]
    ticks = []
    for t in range(n_t):
        recs = tuple(AgentRecord(ids[a], sides[a], float(positions[t, a, 0]), float(positions[t, a, 1]),
                                 float(health[t, a])) for a in range(n_a))
        ticks.append(Tick(t * interval, recs))
    meta = MatchMeta(match_id, label, arena, arena, interval, controlled)
    return Match(meta, tuple(ticks))


@pytest.fixture
def two_tick_match():
    return make_match([[[10, 20], [100, 100]], [[12, 20], [99, 98]]], ["blue", "red"])


@pytest.fixture(scope="session")
def small_match():
    """Six ticks, one controlled blue walking east, a red and a blue replaying."""
    rng = np.random.default_rng(3)
    n_t = 6
    pos = np.zeros((n_t, 3, 2))
    pos[:, 0] = np.column_stack([100 + 5 * np.arange(n_t), np.full(n_t, 100.0)])
    pos[:, 1] = np.column_stack([200 - 4 * np.arange(n_t), 150 + rng.normal(0, 1, n_t)])
    pos[:, 2] = np.column_stack([80 + np.arange(n_t), 60 + 2 * np.arange(n_t)])
    return make_match(pos, ["blue", "red", "blue"], controlled="b0")


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion that ran."""
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
