"""Kernel-based projection IRL.

Starting from a random reward, each iteration sets the reward to the residual
``alpha = mu_E - mu_bar`` between the expert's kernel expectation and the
current projection point, solves it with direct estimate iteration, estimates
the new policy's kernel expectation and projects ``mu_E`` onto the segment
joining it to ``mu_bar``. The reward whose policy came closest to ``mu_E``
is selected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import rkhs
from .rkhs import KernelSpec, RkhsVector, dot, norm
from .rl import DeiParams, direct_estimate_iteration

log = logging.getLogger(__name__)


class DegenerateStepError(ArithmeticError):
    """The new expectation coincides with the current projection point."""


class KpirlSolverError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"RL solve failed at iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass(frozen=True)
class KpirlParams:
    epsilon: float = 0.1
    relative_epsilon: bool = True  # epsilon is a fraction of ||mu_E||
    max_iterations: int = 20
    rl_params: DeiParams = DeiParams()
    expectation_episodes: int = 1
    expectation_horizon: int | None = None  # None: run to the end of the recording
    T: int = rkhs.DEFAULT_T
    random_anchors: int = 10
    stall_tolerance: float = 1e-6
    stall_patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class KpirlIteration:
    index: int
    alpha: RkhsVector | None
    reward: RkhsVector
    policy: Any
    mu: RkhsVector
    mu_bar: RkhsVector
    distance: float  # ||mu_E - mu_bar||
    mu_distance: float  # ||mu_E - mu||
    beta: float


@dataclass
class KpirlTrace:
    mu_expert: RkhsVector
    epsilon: float
    iterations: list[KpirlIteration] = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.iterations)

    @property
    def distances(self) -> list[float]:
        return [it.distance for it in self.iterations]

    def summary_rows(self) -> list[dict]:
        return [{"iteration": it.index, "residual": it.distance, "beta": it.beta,
                 "mu_distance": it.mu_distance, "anchors": len(it.reward)}
                for it in self.iterations]

    def to_csv(self) -> bytes:
        lines = ["iteration,residual,beta,mu_distance,anchors"]
        for row in self.summary_rows():
            lines.append(f"{row['iteration']},{row['residual']!r},{row['beta']!r},"
                         f"{row['mu_distance']!r},{row['anchors']}")
        return ("\n".join(lines) + "\n").encode("utf-8")


def projection_step(mu_bar_prev: RkhsVector, mu_i: RkhsVector, mu_expert: RkhsVector
                    ) -> tuple[float, RkhsVector]:
    """Project ``mu_expert`` onto the segment from ``mu_bar_prev`` to ``mu_i``.

    ``beta = <mu_i - mu_bar, mu_E - mu_bar> / ||mu_i - mu_bar||^2`` clipped to
    [0, 1], so the residual never grows.
    """
    step = mu_i - mu_bar_prev
    denom = dot(step, step)
    if denom <= 1e-14 * max(1.0, dot(mu_bar_prev, mu_bar_prev)):
        raise DegenerateStepError("mu_i equals mu_bar")
    beta = dot(step, mu_expert - mu_bar_prev) / denom
    beta = min(max(beta, 0.0), 1.0)
    if beta == 0.0:
        return 0.0, mu_bar_prev
    return beta, mu_bar_prev + beta * step


def _seed(base: int, *path: int) -> int:
    return int(np.random.SeedSequence([base, *path]).generate_state(1)[0])


def _anchor_pool(env, mu_expert: RkhsVector, rng: np.random.Generator) -> np.ndarray:
    if hasattr(env, "sample_states"):
        return env.features(env.sample_states(rng, 256))
    return mu_expert.anchors


def kpirl(env, mu_expert: RkhsVector, params: KpirlParams = KpirlParams(), starts=None,
          rl_starts=None) -> tuple[RkhsVector, KpirlTrace]:
    """Learn a reward whose optimal policy reproduces ``mu_expert``.

    Args:
        env: replay-style environment.
        mu_expert: the expert's empirical kernel expectation.
        params: loop, RL and estimation settings.
        starts: start rows for estimating policy expectations; defaults to the
            environment's expert start when it has one.
        rl_starts: exploring-start pool handed to the RL solver.

    Returns:
        The selected reward and the full trace.
    """
    if len(mu_expert) == 0:
        raise ValueError("empty expert expectation")
    spec: KernelSpec = mu_expert.spec
    rng = np.random.default_rng(params.seed)
    eps = params.epsilon * norm(mu_expert) if params.relative_epsilon else params.epsilon
    trace = KpirlTrace(mu_expert, eps)
    if starts is None and hasattr(env, "expert_start"):
        starts = env.expert_start()

    def solve(reward: RkhsVector, i: int):
        rl = replace(params.rl_params, seed=_seed(params.seed, i, 1))
        try:
            policy = direct_estimate_iteration(env, reward, rl, starts=rl_starts)
        except Exception as exc:  # propagate with the iteration index
            raise KpirlSolverError(i, exc) from exc
        mu = rkhs.policy_expectation(env, policy, spec, episodes=params.expectation_episodes,
                                     horizon=params.expectation_horizon, seed=_seed(params.seed, i, 2),
                                     starts=starts, T=params.T)
        return policy, mu

    r1 = rkhs.random_reward(_anchor_pool(env, mu_expert, rng), spec, rng,
                            n_anchors=params.random_anchors, unit_norm=True)
    policy, mu = solve(r1, 1)
    mu_bar = mu
    dist = norm(mu_expert - mu_bar)
    trace.iterations.append(KpirlIteration(1, None, r1, policy, mu, mu_bar, dist, dist, 1.0))
    log.debug("kpirl it=1 residual=%.4g eps=%.4g", dist, eps)

    i, stalls = 1, 0
    trace.stop_reason = "converged" if dist <= eps else "max_iterations"
    while dist > eps and i < params.max_iterations:
        i += 1
        alpha = mu_expert - mu_bar
        policy, mu = solve(alpha, i)
        mu_dist = norm(mu_expert - mu)
        try:
            beta, new_bar = projection_step(mu_bar, mu, mu_expert)
        except DegenerateStepError:
            trace.iterations.append(KpirlIteration(i, alpha, alpha, policy, mu, mu_bar, dist, mu_dist, 0.0))
            trace.stop_reason = "degenerate"
            break
        new_dist = norm(mu_expert - new_bar)
        # guard against round-off when beta is clipped at an endpoint
        if new_dist > dist:
            beta, new_bar, new_dist = 0.0, mu_bar, dist
        trace.iterations.append(KpirlIteration(i, alpha, alpha, policy, mu, new_bar, new_dist, mu_dist, beta))
        log.debug("kpirl it=%d residual=%.4g beta=%.3f mu_dist=%.4g", i, new_dist, beta, mu_dist)
        stalls = stalls + 1 if dist - new_dist < params.stall_tolerance else 0
        mu_bar, dist = new_bar, new_dist
        if dist <= eps:
            trace.stop_reason = "converged"
        elif stalls >= params.stall_patience:
            trace.stop_reason = "stalled"
            break
        else:
            trace.stop_reason = "max_iterations"
    return select_reward(trace), trace


def select_reward(trace: KpirlTrace) -> RkhsVector:
    """The reward whose own policy expectation is closest to the expert's (first on ties)."""
    return best_iteration(trace).reward


def best_iteration(trace: KpirlTrace) -> KpirlIteration:
    if not trace.iterations:
        raise ValueError("empty trace")
    return min(trace.iterations, key=lambda it: (it.mu_distance, it.index))
