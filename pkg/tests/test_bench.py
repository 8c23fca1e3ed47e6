import numpy as np
import pytest

from stratirl.bench import SOLVERS, bench_rl
from stratirl.replay import lattice_mdp
from stratirl.rl import DeiParams

QUICK = DeiParams(iterations=3, episodes_per_iter=30, steps_per_episode=5, window=2)


@pytest.fixture(scope="module")
def report():
    envs = [lattice_mdp(grid=3, n_ticks=6, seed=s) for s in (0, 1)]
    return bench_rl(envs, n_rewards=3, budget=500, seed=4, dei_params=QUICK)


def test_bench_rows_and_order(report):
    assert report.solvers() == list(SOLVERS)
    assert len(report.rows) == 2 * 3 * len(SOLVERS)
    assert sorted({r["reward_id"] for r in report.rows}) == list(range(6))
    assert {r["mdp"] for r in report.rows} == {"mdp0", "mdp1"}


def test_value_iteration_is_an_upper_bound(report):
    by_reward = {}
    for r in report.rows:
        by_reward.setdefault(r["reward_id"], {})[r["solver"]] = r["mean_return"]
    for vals in by_reward.values():
        for s in ("direct_iteration", "q_learning", "random"):
            assert vals[s] <= vals["value_iteration"] + 1e-6


def test_budgets_are_respected(report):
    for r in report.rows:
        if r["solver"] in ("direct_iteration", "q_learning"):
            assert r["interactions_used"] <= 500
        if r["solver"] == "random":
            assert r["interactions_used"] == 0


def test_csv_outputs(report):
    lines = report.to_csv().decode().splitlines()
    assert lines[0] == "reward_id,solver,mean_return,interactions_used,mdp"
    assert len(lines) == 1 + len(report.rows)
    wide = report.wide_csv().decode().splitlines()
    assert wide[0] == "reward_id,mdp," + ",".join(SOLVERS)
    assert len(wide) == 7
    assert '"solver_means"' in report.meta_json().decode()


def test_bench_is_deterministic(report):
    envs = [lattice_mdp(grid=3, n_ticks=6, seed=s) for s in (0, 1)]
    again = bench_rl(envs, n_rewards=3, budget=500, seed=4, dei_params=QUICK)
    assert again.to_csv() == report.to_csv()
    for s in SOLVERS:
        assert np.isfinite(report.mean(s))
    assert np.isnan(report.mean("nonexistent"))
