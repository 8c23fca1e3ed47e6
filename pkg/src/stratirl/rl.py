"""Forward RL on replay MDPs.

:func:`direct_estimate_iteration` is the on-policy Monte Carlo policy iteration
that learns a regression-tree Q function from W-step return observations
accumulated across iterations. :func:`value_iteration` is the exact oracle on
enumerable environments and :func:`q_learning_baseline` a tabular baseline.

Environments follow the batched interface described in :mod:`stratirl.replay`.
Rewards are state rewards ``r(s)``; the return of a trajectory is
``sum_t gamma**t * r(s_t)`` counted from the start state.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from .replay import CapacityError, enumerate_reachable, simulate
from .rkhs import RkhsVector, evaluate_features

START_HEURISTICS = ("random", "greedy", "epsilon_greedy", "softmax")
KEY_DECIMALS = 3


# -- rewards and keys -----------------------------------------------------------

def reward_function(env, reward) -> Callable[[np.ndarray], np.ndarray]:
    """Adapt an RkhsVector (evaluated on the env's features) or a callable on state rows."""
    if isinstance(reward, RkhsVector):
        return lambda states: evaluate_features(reward, env.features(states))
    if callable(reward):
        return lambda states: np.asarray(reward(np.atleast_2d(states)), dtype=float)
    raise TypeError(f"unsupported reward {type(reward).__name__}")


def feature_keys(features: np.ndarray) -> list[tuple]:
    """Feature rows quantized to 1e-3, as hashable tuples."""
    q = np.rint(np.atleast_2d(features) * 10 ** KEY_DECIMALS).astype(np.int64)
    return [tuple(row) for row in q.tolist()]


# -- observation store ----------------------------------------------------------

def n_step_return(rewards: Sequence[float], gamma: float, W: int) -> float:
    """``sum_{t<W} gamma**t * rewards[t]``."""
    if W < 1:
        raise ValueError("W must be >= 1")
    if len(rewards) < W:
        raise ValueError(f"need at least {W} rewards, got {len(rewards)}")
    return float(sum(gamma ** t * rewards[t] for t in range(W)))


class QObservations(dict):
    """Map ``(feature key, action) -> value`` updated by halving averages."""

    def update_observation(self, key, value: float) -> QObservations:
        old = self.get(key)
        self[key] = value if old is None else (old + value) / 2.0
        return self

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(feature rows, actions, values) in insertion order."""
        keys = list(self.keys())
        feats = np.array([k[0] for k in keys], dtype=float) / 10 ** KEY_DECIMALS
        acts = np.array([k[1] for k in keys], dtype=int)
        vals = np.array(list(self.values()), dtype=float)
        return feats, acts, vals


def update_observation(store: QObservations, key, value: float) -> QObservations:
    return store.update_observation(key, value)


# -- Q regressor and policies ---------------------------------------------------

class QRegressor:
    """Regression tree over (features, one-hot action)."""

    def __init__(self, n_actions: int, max_depth: int | None = 12, min_leaf: int = 2):
        self.n_actions = n_actions
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.tree = DecisionTreeRegressor(max_depth=max_depth, min_samples_leaf=min_leaf,
                                          random_state=0)

    def _design(self, features, actions):
        features = np.atleast_2d(features)
        onehot = np.zeros((features.shape[0], self.n_actions))
        onehot[np.arange(features.shape[0]), np.asarray(actions, dtype=int)] = 1.0
        return np.hstack([features, onehot])

    def fit(self, features, actions, values) -> QRegressor:
        self.tree.fit(self._design(features, actions), np.asarray(values, dtype=float))
        return self

    def predict(self, features, actions) -> np.ndarray:
        return self.tree.predict(self._design(features, actions))

    def predict_all(self, features) -> np.ndarray:
        """(n, n_actions) Q values."""
        features = np.atleast_2d(features)
        n, A = features.shape[0], self.n_actions
        vals = self.predict(np.repeat(features, A, axis=0), np.tile(np.arange(A), n))
        return vals.reshape(n, A)


class GreedyPolicy:
    """Argmax over a fitted QRegressor; ties go to the lowest action index."""

    def __init__(self, q: QRegressor):
        self.q = q

    def act(self, env, states, rng=None) -> np.ndarray:
        return np.argmax(self.q.predict_all(env.features(states)), axis=1)


class RandomPolicy:
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def act(self, env, states, rng) -> np.ndarray:
        return rng.integers(self.n_actions, size=np.atleast_2d(states).shape[0])


class TablePolicy:
    """Lookup table from state keys to actions.

    ``key`` selects exact state keys (``"state"``) or quantized feature keys
    (``"features"``). Keys absent from the table get a fixed pseudo-random
    action derived from the key and ``seed``.
    """

    def __init__(self, table: dict, n_actions: int, key: str = "features", seed: int = 0):
        if key not in ("features", "state"):
            raise ValueError(f"unknown key kind {key!r}")
        self.table = dict(table)
        self.n_actions = n_actions
        self.key = key
        self.seed = seed

    def keys_for(self, env, states) -> list:
        if self.key == "state":
            return env.state_keys(states)
        return feature_keys(env.features(states))

    def _fallback(self, key) -> int:
        return zlib.crc32(repr((self.seed, key)).encode()) % self.n_actions

    def act(self, env, states, rng=None) -> np.ndarray:
        return np.array([self.table[k] if k in self.table else self._fallback(k)
                         for k in self.keys_for(env, states)], dtype=int)


# -- direct estimate iteration --------------------------------------------------

@dataclass(frozen=True)
class DeiParams:
    iterations: int = 10
    episodes_per_iter: int = 50
    steps_per_episode: int = 20
    window: int = 5
    discount: float = 0.9
    start_heuristic: str = "softmax"
    softmax_temperature: float = 0.1
    epsilon: float = 0.1
    max_depth: int | None = 12
    min_leaf: int = 2
    bootstrap: bool = False
    every_visit: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.episodes_per_iter < 1:
            raise ValueError("iterations and episodes_per_iter must be >= 1")
        if not 1 <= self.window <= self.steps_per_episode:
            raise ValueError("need 1 <= window <= steps_per_episode")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.start_heuristic not in START_HEURISTICS:
            raise ValueError(f"start_heuristic must be one of {START_HEURISTICS}")
        if not self.softmax_temperature > 0:
            raise ValueError("softmax_temperature must be positive")

    @property
    def interactions(self) -> int:
        return self.iterations * self.episodes_per_iter * self.steps_per_episode

    def within_budget(self, budget: int) -> DeiParams:
        """Shrink episodes per iteration so that I*M*T <= budget."""
        per_iter = self.iterations * self.steps_per_episode
        m = max(1, min(self.episodes_per_iter, budget // per_iter))
        return replace(self, episodes_per_iter=m)


def _softmax_rows(qvals: np.ndarray, temperature: float, rng: np.random.Generator) -> np.ndarray:
    z = qvals / temperature
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(p.shape[0])[:, None]
    idx = (np.cumsum(p, axis=1) < u).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def softmax_start(q, candidates: Sequence, temperature: float, seed=None):
    """Sample one candidate with probability proportional to ``exp(q / temperature)``.

    ``q`` maps the candidate list to an array of values; ``None`` (no regressor
    fitted yet) means uniform selection.
    """
    if not candidates:
        raise ValueError("no candidates")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if q is None:
        return candidates[int(rng.integers(len(candidates)))]
    values = np.asarray(q(candidates), dtype=float).reshape(1, -1)
    return candidates[int(_softmax_rows(values, temperature, rng)[0])]


def _start_actions(q: QRegressor | None, env, s0: np.ndarray, params: DeiParams, rng,
                   q_scale: float) -> np.ndarray:
    n, A = s0.shape[0], env.n_actions
    if q is None or params.start_heuristic == "random":
        return rng.integers(A, size=n)
    qvals = q.predict_all(env.features(s0))
    if params.start_heuristic == "greedy":
        return np.argmax(qvals, axis=1)
    if params.start_heuristic == "epsilon_greedy":
        explore = rng.random(n) < params.epsilon
        return np.where(explore, rng.integers(A, size=n), np.argmax(qvals, axis=1))
    # q-values are rescaled so the temperature does not depend on the reward's units
    return _softmax_rows(qvals / q_scale, params.softmax_temperature, rng)


def _window_returns(rewards: np.ndarray, gamma: float, W: int) -> np.ndarray:
    """All W-step returns of each row; ``rewards`` is zero-padded by W."""
    n_win = rewards.shape[1] - W + 1
    out = np.zeros((rewards.shape[0], n_win))
    for t in range(W):
        out += gamma ** t * rewards[:, t:t + n_win]
    return out


@dataclass
class DeiResult:
    policy: GreedyPolicy
    store: QObservations
    regressor: QRegressor
    interactions: int
    history: list = field(default_factory=list)


def direct_estimate_iteration(env, reward, params: DeiParams = DeiParams(), starts=None,
                              full_result: bool = False):
    """Learn a greedy policy for ``reward`` on ``env``.

    Each of ``params.iterations`` rounds runs ``episodes_per_iter`` rollouts of
    ``steps_per_episode`` steps from uniformly drawn start rows (``starts`` or
    the env's start states), the first action chosen by the start heuristic and
    the rest by the current policy. Every window ``w = 0..T-W`` contributes its
    W-step return to the observation store, which is never cleared, and a tree
    refit on the store defines the next greedy policy. Returns past a terminal
    state are zero, so windows ending after termination are exact.
    """
    rng = np.random.default_rng(params.seed)
    r = reward_function(env, reward)
    pool = np.atleast_2d(env.start_states() if starts is None else starts)
    T, W, M, gamma = params.steps_per_episode, params.window, params.episodes_per_iter, params.discount
    A = env.n_actions

    store = QObservations()
    policy = RandomPolicy(A)
    q: QRegressor | None = None
    q_scale = 1.0
    interactions = 0
    history = []
    for it in range(params.iterations):
        s0 = pool[rng.integers(len(pool), size=M)]
        a0 = _start_actions(q, env, s0, params, rng, q_scale)
        sim = simulate(env, policy, s0, a0, T, rng)
        interactions += sim.interactions

        n_states = sim.states.shape[1]
        flat = sim.states.reshape(-1, sim.states.shape[2])
        valid = (np.arange(n_states)[None, :] <= sim.lengths[:, None]).reshape(-1)
        feats = np.zeros((flat.shape[0], env.features(flat[:1]).shape[1]))
        feats[valid] = env.features(flat[valid])
        rew = np.zeros(flat.shape[0])
        rew[valid] = r(flat[valid])
        rew = rew.reshape(M, n_states)
        keys = feature_keys(feats)

        horizon_w = n_states if params.every_visit else W
        padded = np.hstack([rew, np.zeros((M, horizon_w))])
        returns = _window_returns(padded, gamma, horizon_w)
        if params.bootstrap and q is not None:
            # add gamma**W * V(s_{w+W}) for windows whose tail state exists
            tail = np.arange(n_states) + horizon_w
            exists = tail[None, :] <= sim.lengths[:, None]
            idx = np.minimum(tail, n_states - 1)
            tail_states = sim.states[:, idx].reshape(-1, sim.states.shape[2])
            tail_v = q.predict_all(env.features(tail_states)).max(axis=1).reshape(M, n_states)
            is_term = env.terminal_mask(tail_states).reshape(M, n_states)
            tail_v = np.where(is_term, rew[np.arange(M)[:, None], idx], tail_v)
            returns[:, :n_states] += np.where(exists, gamma ** horizon_w * tail_v, 0.0)

        for m in range(M):
            L = int(sim.lengths[m])
            if params.every_visit:
                last = L - 1
            elif sim.terminated[m]:
                last = min(T - W, L - 1)
            else:
                last = min(T - W, L - W)
            for w in range(last + 1):
                key = (keys[m * n_states + w], int(sim.actions[m, w]))
                store.update_observation(key, float(returns[m, w]))

        if store:
            f, a, v = store.arrays()
            q = QRegressor(A, params.max_depth, params.min_leaf).fit(f, a, v)
            q_scale = max(float(np.abs(v).max()), 1e-12)
            policy = GreedyPolicy(q)
        history.append({"iteration": it + 1, "observations": len(store), "interactions": interactions})

    if q is None:
        raise RuntimeError("no observation windows were collected; check steps_per_episode and window")
    if full_result:
        return DeiResult(policy, store, q, interactions, history)
    return policy


# -- value iteration ------------------------------------------------------------

@dataclass
class ValueTable:
    states: np.ndarray
    values: np.ndarray
    index: dict

    def value(self, env, states) -> np.ndarray:
        return np.array([self.values[self.index[k]] for k in env.state_keys(states)])


def value_iteration(env, reward, gamma: float, tolerance: float = 1e-10, budget: int = 200_000,
                    max_sweeps: int = 100_000) -> tuple[ValueTable, TablePolicy]:
    """Bellman backups ``V = r + gamma * max_a V(step(s, a))`` to convergence.

    Terminal states keep ``V = r``. Raises :class:`CapacityError` when the
    reachable state set exceeds ``budget``.
    """
    states = enumerate_reachable(env, budget)
    keys = env.state_keys(states)
    index = {k: i for i, k in enumerate(keys)}
    S, A = len(states), env.n_actions
    r = reward_function(env, reward)(states)
    term = env.terminal_mask(states)
    live = np.flatnonzero(~term)
    nxt = np.zeros((S, A), dtype=int)
    if live.size:
        succ = env.step_batch(np.repeat(states[live], A, axis=0), np.tile(np.arange(A), live.size))
        nxt[live] = np.array([index[k] for k in env.state_keys(succ)]).reshape(live.size, A)
    V = r.copy()
    for _ in range(max_sweeps):
        new = r.copy()
        if live.size:
            new[live] += gamma * V[nxt[live]].max(axis=1)
        delta = float(np.max(np.abs(new - V))) if S else 0.0
        V = new
        if delta < tolerance:
            break
    greedy = np.zeros(S, dtype=int)
    if live.size:
        greedy[live] = np.argmax(V[nxt[live]], axis=1)
    policy = TablePolicy({k: int(greedy[i]) for i, k in enumerate(keys)}, A, key="state")
    return ValueTable(states, V, index), policy


# -- tabular Q-learning -----------------------------------------------------------

@dataclass(frozen=True)
class QLearningParams:
    learning_rate: float = 0.2
    epsilon: float = 0.2
    discount: float = 0.9
    horizon: int = 20
    seed: int = 0


def q_learning_baseline(env, reward, budget: int, params: QLearningParams = QLearningParams(),
                        starts=None) -> TablePolicy:
    """Epsilon-greedy tabular Q-learning over quantized feature keys.

    Stops after exactly ``budget`` environment steps. Unvisited keys fall back
    to the returned table's fixed pseudo-random action.
    """
    rng = np.random.default_rng(params.seed)
    r = reward_function(env, reward)
    pool = np.atleast_2d(env.start_states() if starts is None else starts)
    A, gamma = env.n_actions, params.discount
    Q: dict = {}

    def qrow(key):
        row = Q.get(key)
        if row is None:
            row = Q[key] = rng.normal(0.0, 1e-6, A)
        return row

    cache: dict = {}

    def lookup(state):
        # per-state feature key, reward and terminal flag; states repeat a lot
        k = env.state_keys(state)[0]
        hit = cache.get(k)
        if hit is None:
            hit = cache[k] = (feature_keys(env.features(state))[0], float(r(state)[0]),
                              bool(env.terminal_mask(state)[0]))
        return hit

    used = 0
    while used < budget:
        s = pool[rng.integers(len(pool))][None, :]
        key, r_s, done = lookup(s)
        if done:
            continue
        for _ in range(params.horizon):
            if used >= budget:
                break
            row = qrow(key)
            a = int(rng.integers(A)) if rng.random() < params.epsilon else int(np.argmax(row))
            s2 = env.step_batch(s, [a])
            used += 1
            key2, r_s2, done = lookup(s2)
            target = r_s + gamma * (r_s2 if done else float(qrow(key2).max()))
            row[a] += params.learning_rate * (target - row[a])
            s, key, r_s = s2, key2, r_s2
            if done:
                break
    table = {k: int(np.argmax(v)) for k, v in Q.items()}
    return TablePolicy(table, A, key="features", seed=params.seed)


# -- evaluation -------------------------------------------------------------------

def evaluate_policy(env, policy, reward, gamma: float, episodes: int | None = None,
                    horizon: int | None = None, seed=None, starts=None) -> float:
    """Mean discounted return ``sum_t gamma**t r(s_t)`` from the start distribution.

    With ``episodes=None`` every start row is rolled out once, which is the
    exact expectation for deterministic environments and policies.
    """
    rng = np.random.default_rng(seed)
    pool = np.atleast_2d(env.start_states() if starts is None else starts)
    if episodes is None:
        s0 = pool
    else:
        if episodes < 1:
            raise ValueError("episodes must be >= 1")
        s0 = pool[rng.integers(len(pool), size=episodes)]
    sim = simulate(env, policy, s0, None, horizon, rng)
    r = reward_function(env, reward)
    n, H1, d = sim.states.shape
    valid = np.arange(H1)[None, :] <= sim.lengths[:, None]
    flat = sim.states.reshape(-1, d)
    rew = np.zeros(n * H1)
    rew[valid.reshape(-1)] = r(flat[valid.reshape(-1)])
    disc = gamma ** np.arange(H1)
    return float((rew.reshape(n, H1) * disc).sum(axis=1).mean())


def optimal_start_value(table: ValueTable, env, starts=None) -> float:
    pool = np.atleast_2d(env.start_states() if starts is None else starts)
    return float(table.value(env, pool).mean())


__all__ = [
    "CapacityError", "DeiParams", "DeiResult", "GreedyPolicy", "QLearningParams", "QObservations",
    "QRegressor", "RandomPolicy", "TablePolicy", "ValueTable", "direct_estimate_iteration",
    "evaluate_policy", "feature_keys", "n_step_return", "optimal_start_value", "q_learning_baseline",
    "reward_function", "softmax_start", "update_observation", "value_iteration",
]
