"""Deterministic replay MDP built on a recorded match.

One blue agent is replaced by a controllable agent; every other agent follows
the recording regardless of what the controlled agent does.

Besides the object-level API (:class:`MdpState`, :func:`step`, :func:`rollout`)
environments expose a batched array interface used by the learners:

* ``n_actions``
* ``start_states()`` -> (n, d) array, the support of the uniform start distribution
* ``step_batch(states, actions)`` -> (n, d)
* ``terminal_mask(states)`` -> (n,) bool
* ``features(states)`` -> (n, f) kernel features
* ``state_keys(states)`` -> list of hashable exact keys

For :class:`ReplayMdp` a state row is ``(tick_index, x, y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .rkhs import scene_features
from .trajectory import AgentRecord, Match


class Action(IntEnum):
    STAY = 0
    N = 1
    NE = 2
    E = 3
    SE = 4
    S = 5
    SW = 6
    W = 7
    NW = 8


N_ACTIONS = len(Action)
_R = 1 / math.sqrt(2)
# unit displacement per action; +y is north
ISOTROPIC_DIRS = np.array([
    (0, 0), (0, 1), (_R, _R), (1, 0), (_R, -_R), (0, -1), (-_R, -_R), (-1, 0), (-_R, _R),
])
LATTICE_DIRS = np.array([
    (0, 0), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1),
], dtype=float)


class TerminalStateError(RuntimeError):
    pass


class CapacityError(RuntimeError):
    """State enumeration exceeded its budget."""


@dataclass(frozen=True)
class MdpState:
    tick_index: int
    controlled_x: float
    controlled_y: float
    controlled_health: float
    others: tuple[AgentRecord, ...]


@dataclass(frozen=True)
class Rollout:
    states: tuple[MdpState, ...]
    actions: tuple[Action, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a rollout has exactly one more state than actions")


def infer_action(dx: float, dy: float, step_length: float) -> Action:
    """Nearest of the nine actions to a displacement; ``STAY`` below half a step."""
    if math.hypot(dx, dy) < step_length / 2:
        return Action.STAY
    bearing = math.degrees(math.atan2(dy, dx)) % 360.0  # 0 = east, counter-clockwise
    sector = int(((bearing + 22.5) % 360.0) // 45.0)  # 0 = E, 1 = NE, 2 = N, ...
    return (Action.E, Action.NE, Action.N, Action.NW, Action.W, Action.SW, Action.S, Action.SE)[sector]


def median_step_length(match: Match, agent_id: str) -> float:
    """Median per-tick displacement of ``agent_id`` while alive (1.0 if it never moves)."""
    arr = match.arrays()
    j = arr.index(agent_id)
    xy, alive = arr.xy[:, j], arr.health[:, j] > 0
    if len(xy) < 2:
        return 1.0
    d = np.hypot(*(xy[1:] - xy[:-1]).T)
    d = d[alive[:-1]]
    if d.size and np.median(d) > 0:
        return float(np.median(d))
    moving = d[d > 0]
    return float(moving.mean()) if moving.size else 1.0


class ReplayMdp:
    """Replay MDP over ``match`` with ``replaced_agent_id`` under control.

    ``step_length`` defaults to the replaced agent's median per-tick
    displacement. With ``isotropic`` (the default) diagonal moves are scaled by
    1/sqrt(2); with ``isotropic=False`` they are king moves on a lattice, which
    keeps positions enumerable when the arena is a multiple of the step.
    """

    n_actions = N_ACTIONS

    def __init__(self, match: Match, replaced_agent_id: str, step_length: float | None = None,
                 discount: float = 0.9, isotropic: bool = True):
        arr = match.arrays()
        if replaced_agent_id not in arr.agent_ids:
            raise ValueError(f"agent {replaced_agent_id!r} not in match {match.match_id!r}")
        if match.side_of(replaced_agent_id) != "blue":
            raise ValueError(f"replaced agent {replaced_agent_id!r} is not blue")
        if not 0.0 <= discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {discount}")
        if step_length is None:
            step_length = median_step_length(match, replaced_agent_id)
        if not step_length > 0:
            raise ValueError("step_length must be positive")
        self.match = match
        self.replaced_agent_id = replaced_agent_id
        self.step_length = float(step_length)
        self.discount = float(discount)
        self.isotropic = isotropic
        self.width = match.meta.arena_width
        self.height = match.meta.arena_height
        self.diagonal = match.meta.arena_diagonal
        self.n_ticks = len(match.ticks)

        j = arr.index(replaced_agent_id)
        self._ctrl_index = j
        self._ctrl_xy = arr.xy[:, j]
        self._ctrl_health0 = float(arr.health[0, j])
        others = np.array([i for i in range(len(arr.agent_ids)) if i != j], dtype=int)
        self._others = others
        red = others[arr.sides[others] == "red"]
        blue = others[arr.sides[others] == "blue"]
        self._red_xy, self._red_alive = arr.xy[:, red], arr.health[:, red] > 0
        self._blue_xy, self._blue_alive = arr.xy[:, blue], arr.health[:, blue] > 0
        self._dirs = (ISOTROPIC_DIRS if isotropic else LATTICE_DIRS) * self.step_length

    def __repr__(self):
        return (f"ReplayMdp(match={self.match.match_id!r}, agent={self.replaced_agent_id!r}, "
                f"step={self.step_length:.3g}, ticks={self.n_ticks})")

    # -- object API -----------------------------------------------------------

    def to_state(self, row) -> MdpState:
        t = int(row[0])
        tick = self.match.ticks[t]
        others = tuple(a for a in tick.agents if a.agent_id != self.replaced_agent_id)
        return MdpState(t, float(row[1]), float(row[2]), self._ctrl_health0, others)

    @staticmethod
    def to_row(state: MdpState) -> np.ndarray:
        return np.array([state.tick_index, state.controlled_x, state.controlled_y], dtype=float)

    def is_terminal(self, state: MdpState) -> bool:
        return state.tick_index >= self.n_ticks - 1

    # -- batched API ----------------------------------------------------------

    def start_states(self) -> np.ndarray:
        """Recorded (tick, position) of the replaced agent at every non-terminal tick."""
        last = max(self.n_ticks - 1, 1)
        ticks = np.arange(last, dtype=float)
        return np.column_stack([ticks, self._ctrl_xy[:last]])

    def expert_start(self) -> np.ndarray:
        return np.array([[0.0, *self._ctrl_xy[0]]])

    def step_batch(self, states: np.ndarray, actions) -> np.ndarray:
        states = np.atleast_2d(states)
        if np.any(states[:, 0] >= self.n_ticks - 1):
            raise TerminalStateError("cannot step a terminal state")
        d = self._dirs[np.asarray(actions, dtype=int)]
        out = np.empty_like(states, dtype=float)
        out[:, 0] = states[:, 0] + 1
        out[:, 1] = np.clip(states[:, 1] + d[:, 0], 0.0, self.width)
        out[:, 2] = np.clip(states[:, 2] + d[:, 1], 0.0, self.height)
        return out

    def terminal_mask(self, states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states)[:, 0] >= self.n_ticks - 1

    def features(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        t = states[:, 0].astype(int)
        return scene_features(states[:, 1:3], self._red_xy[t], self._red_alive[t],
                              self._blue_xy[t], self._blue_alive[t], self.diagonal)

    def state_keys(self, states: np.ndarray) -> list:
        states = np.atleast_2d(states)
        return [(int(t), round(float(x), 9), round(float(y), 9)) for t, x, y in states]

    def sample_states(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform ticks and uniform arena positions; used to seed random rewards."""
        t = rng.integers(self.n_ticks, size=n).astype(float)
        x = rng.uniform(0, self.width, size=n)
        y = rng.uniform(0, self.height, size=n)
        return np.column_stack([t, x, y])

    def enumerate_states(self, budget: int = 200_000) -> np.ndarray:
        return enumerate_reachable(self, budget)


# -- module-level operations ----------------------------------------------------

def initial_state(mdp: ReplayMdp) -> MdpState:
    return mdp.to_state(mdp.expert_start()[0])


def step(mdp: ReplayMdp, s: MdpState, a: Action | int) -> MdpState:
    if mdp.is_terminal(s):
        raise TerminalStateError(f"tick {s.tick_index} is the last recorded tick")
    row = mdp.step_batch(mdp.to_row(s)[None, :], [int(a)])[0]
    return mdp.to_state(row)


@dataclass
class Simulation:
    """Batched rollouts; episode ``i`` has ``lengths[i]`` actions."""

    states: np.ndarray  # (n, H + 1, d)
    actions: np.ndarray  # (n, H), -1 past the end
    lengths: np.ndarray  # (n,)
    terminated: np.ndarray  # (n,) reached a terminal state
    interactions: int

    def episode(self, i: int) -> np.ndarray:
        return self.states[i, : self.lengths[i] + 1]


def simulate(env, policy, starts, first_actions, horizon: int | None, rng: np.random.Generator,
             max_steps: int = 100_000) -> Simulation:
    """Roll out ``policy`` from each start row for at most ``horizon`` steps.

    ``first_actions`` (or None to let the policy choose) fixes the first action
    of every episode. Episodes stop early on reaching a terminal state.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n, dim = starts.shape
    H = max_steps if horizon is None else int(horizon)
    cap = H if horizon is not None else 64
    states = np.zeros((n, cap + 1, dim))
    actions = np.full((n, cap), -1, dtype=int)
    states[:, 0] = starts
    lengths = np.zeros(n, dtype=int)
    done = env.terminal_mask(starts).copy()
    current = starts.copy()
    interactions = 0
    for h in range(H):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        if h >= cap:
            grow = cap
            states = np.concatenate([states, np.zeros((n, grow, dim))], axis=1)
            actions = np.concatenate([actions, np.full((n, grow), -1, dtype=int)], axis=1)
            cap += grow
        if h == 0 and first_actions is not None:
            a = np.broadcast_to(np.asarray(first_actions, dtype=int), (n,))[active]
        else:
            a = np.asarray(policy.act(env, current[active], rng), dtype=int)
        nxt = env.step_batch(current[active], a)
        interactions += active.size
        current[active] = nxt
        states[active, h + 1] = nxt
        actions[active, h] = a
        lengths[active] += 1
        done[active] = env.terminal_mask(nxt)
    return Simulation(states, actions, lengths, env.terminal_mask(current), interactions)


def rollout(mdp: ReplayMdp, policy, s0: MdpState, a0: Action | int, horizon: int, seed=None) -> Rollout:
    """One rollout that takes ``a0`` first and then follows ``policy``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    sim = simulate(mdp, policy, mdp.to_row(s0)[None, :], [int(a0)], horizon, rng)
    rows = sim.episode(0)
    acts = sim.actions[0, : sim.lengths[0]]
    return Rollout(tuple(mdp.to_state(r) for r in rows), tuple(Action(int(a)) for a in acts))


def expert_rollouts(match: Match, agent_id: str, step_length: float | None = None) -> list[Rollout]:
    """The recorded agent's own trajectory as a rollout of its replay MDP.

    The sequence stops at the agent's last living tick. Actions are the
    nearest of the nine moves to each recorded displacement.
    """
    mdp = ReplayMdp(match, agent_id, step_length=step_length)
    rows = expert_rows(mdp)
    acts = tuple(infer_action(*(b[1:] - a[1:]), mdp.step_length) for a, b in zip(rows, rows[1:]))
    return [Rollout(tuple(mdp.to_state(r) for r in rows), acts)]


def expert_rows(mdp: ReplayMdp) -> np.ndarray:
    """State rows (tick, x, y) of the replaced agent while it is alive."""
    arr = mdp.match.arrays()
    alive = arr.health[:, mdp._ctrl_index] > 0
    stop = int(np.argmin(alive)) if not alive.all() else len(alive)
    stop = max(stop, 1)
    ticks = np.arange(stop, dtype=float)
    return np.column_stack([ticks, mdp._ctrl_xy[:stop]])


def enumerate_reachable(env, budget: int, starts: np.ndarray | None = None) -> np.ndarray:
    """Breadth-first enumeration of every state reachable from the start states."""
    frontier = np.atleast_2d(env.start_states() if starts is None else starts)
    seen: dict = {}
    rows: list[np.ndarray] = []

    def admit(batch):
        fresh = []
        for key, row in zip(env.state_keys(batch), batch):
            if key not in seen:
                seen[key] = len(rows)
                rows.append(row)
                fresh.append(row)
                if len(rows) > budget:
                    raise CapacityError(f"more than {budget} reachable states")
        return np.array(fresh).reshape(-1, batch.shape[1])

    frontier = admit(frontier)
    while frontier.size:
        live = frontier[~env.terminal_mask(frontier)]
        if live.size == 0:
            break
        A = env.n_actions
        rep = np.repeat(live, A, axis=0)
        acts = np.tile(np.arange(A), len(live))
        frontier = admit(env.step_batch(rep, acts))
    return np.array(rows)


def lattice_match(grid: int = 5, spacing: float = 10.0, n_ticks: int = 10, seed: int = 0,
                  n_red: int = 2, n_blue: int = 2) -> Match:
    """Small synthetic match whose blue agent ``b0`` starts on a ``grid`` x ``grid`` lattice.

    Paired with ``ReplayMdp(..., step_length=spacing, isotropic=False)`` it gives
    a replay MDP with ``grid**2 * n_ticks`` enumerable states.
    """
    from .trajectory import MatchMeta, Tick

    rng = np.random.default_rng(seed)
    size = spacing * (grid - 1)
    agents = [("b0", "blue")] + [(f"r{i}", "red") for i in range(n_red)] + \
             [(f"b{i + 1}", "blue") for i in range(n_blue)]
    pos = {aid: rng.uniform(0, size, 2) for aid, _ in agents}
    pos["b0"] = rng.integers(0, grid, 2) * spacing
    vel = {aid: rng.normal(0, spacing / 3, 2) for aid, _ in agents}
    ticks = []
    for t in range(n_ticks):
        recs = []
        for aid, side in agents:
            if t and aid == "b0":
                pos[aid] = np.clip(pos[aid] + LATTICE_DIRS[rng.integers(N_ACTIONS)] * spacing, 0, size)
            elif t:
                pos[aid] = np.clip(pos[aid] + vel[aid], 0, size)
            x, y = pos[aid]
            recs.append(AgentRecord(aid, side, float(x), float(y), 1.0))
        ticks.append(Tick(float(t) * 3.0, tuple(recs)))
    meta = MatchMeta(f"lattice{seed}", None, size, size, 3.0, "b0")
    return Match(meta, tuple(ticks))


def lattice_mdp(grid: int = 5, spacing: float = 10.0, n_ticks: int = 10, seed: int = 0,
                discount: float = 0.9) -> ReplayMdp:
    """Enumerable replay MDP on a ``grid`` x ``grid`` lattice (see :func:`lattice_match`)."""
    return ReplayMdp(lattice_match(grid, spacing, n_ticks, seed), "b0", step_length=spacing,
                     discount=discount, isotropic=False)


def rows_to_states(mdp: ReplayMdp, rows: Sequence) -> list[MdpState]:
    return [mdp.to_state(r) for r in rows]
