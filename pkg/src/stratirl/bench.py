"""Forward-RL solver comparison over random kernel rewards."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .replay import CapacityError, enumerate_reachable
from .rkhs import KernelSpec, random_reward
from .rl import (DeiParams, QLearningParams, RandomPolicy, direct_estimate_iteration,
                 evaluate_policy, q_learning_baseline, value_iteration)

log = logging.getLogger(__name__)

SOLVERS = ("value_iteration", "direct_iteration", "q_learning", "random")


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def solvers(self) -> list[str]:
        return [s for s in SOLVERS if any(r["solver"] == s for r in self.rows)]

    def returns(self, solver: str) -> np.ndarray:
        return np.array([r["mean_return"] for r in self.rows if r["solver"] == solver])

    def mean(self, solver: str) -> float:
        vals = self.returns(solver)
        return float(vals.mean()) if vals.size else float("nan")

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("reward_id,solver,mean_return,interactions_used,mdp\n")
        for r in self.rows:
            buf.write(f"{r['reward_id']},{r['solver']},{r['mean_return']!r},{r['interactions_used']},{r['mdp']}\n")
        return buf.getvalue().encode("utf-8")

    def wide_csv(self) -> bytes:
        """One row per reward, one column per solver."""
        solvers = self.solvers()
        table: dict = {}
        for r in self.rows:
            table.setdefault((r["reward_id"], r["mdp"]), {})[r["solver"]] = r["mean_return"]
        buf = io.StringIO()
        buf.write("reward_id,mdp," + ",".join(solvers) + "\n")
        for (rid, mdp), vals in table.items():
            cells = [repr(vals[s]) if s in vals else "" for s in solvers]
            buf.write(f"{rid},{mdp}," + ",".join(cells) + "\n")
        return buf.getvalue().encode("utf-8")

    def meta_json(self) -> bytes:
        meta = dict(self.meta)
        meta["solver_means"] = {s: self.mean(s) for s in self.solvers()}
        return (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("utf-8")


def bench_rl(envs: Sequence, n_rewards: int = 30, budget: int = 10_000, seed: int = 0,
             dei_params: DeiParams = DeiParams(), q_params: QLearningParams = QLearningParams(),
             bandwidth: float = 0.25, n_anchors: int = 10, vi_budget: int = 200_000,
             names: Sequence[str] | None = None) -> BenchReport:
    """Compare solvers on ``n_rewards`` random kernel rewards per environment.

    Rewards put ``n_anchors`` anchors on reachable states with weights uniform
    in [-1, 1]. Direct iteration has its episodes per iteration cut to fit the
    interaction budget; Q-learning stops at exactly ``budget`` steps. Every
    policy is scored by its exact discounted return from each start state
    (rollouts to the end of the recording), averaged over start states.
    """
    names = list(names) if names is not None else [f"mdp{i}" for i in range(len(envs))]
    dei = dei_params.within_budget(budget)
    report = BenchReport(meta={
        "budget": budget, "n_rewards": n_rewards, "seed": seed, "bandwidth": bandwidth,
        "n_anchors": n_anchors, "discount": dei.discount, "dei_params": asdict(dei),
        "q_learning_params": asdict(q_params), "mdps": names,
    })
    rid = 0
    for e, (env, name) in enumerate(zip(envs, names)):
        spec = KernelSpec(bandwidth, env.width, env.height)
        rng = np.random.default_rng([seed, e])
        try:
            pool = enumerate_reachable(env, vi_budget)
            tractable = True
        except CapacityError:
            pool = env.sample_states(rng, 4096)
            tractable = False
        feats = env.features(pool)
        starts = env.start_states()
        for _ in range(n_rewards):
            reward = random_reward(feats, spec, rng, n_anchors=n_anchors)
            sub = int(rng.integers(2**31))

            def score(policy):
                return evaluate_policy(env, policy, reward, dei.discount, starts=starts)

            if tractable:
                _, vi = value_iteration(env, reward, dei.discount, budget=vi_budget)
                report.rows.append(_row(rid, "value_iteration", score(vi), len(pool) * env.n_actions, name))
            pol = direct_estimate_iteration(env, reward, replace(dei, seed=sub))
            report.rows.append(_row(rid, "direct_iteration", score(pol), dei.interactions, name))
            ql = q_learning_baseline(env, reward, budget, replace(q_params, discount=dei.discount, seed=sub),
                                     starts=starts)
            report.rows.append(_row(rid, "q_learning", score(ql), budget, name))
            rnd = _SeededRandom(env.n_actions, sub)
            report.rows.append(_row(rid, "random", score(rnd), 0, name))
            log.info("bench reward %d on %s done", rid, name)
            rid += 1
    return report


class _SeededRandom(RandomPolicy):
    """Uniform random actions from a private stream, so scoring is reproducible."""

    def __init__(self, n_actions: int, seed: int):
        super().__init__(n_actions)
        self._rng = np.random.default_rng(seed)

    def act(self, env, states, rng=None):
        return super().act(env, states, self._rng)


def _row(rid, solver, value, used, mdp) -> dict:
    return {"reward_id": rid, "solver": solver, "mean_return": float(value),
            "interactions_used": int(used), "mdp": mdp}
