"""Seeded synthetic engagements between a red and a blue force.

Red always advances on the nearest living blue agent. Blue follows one of three
scripted strategies:

* ``assault``: advance toward the nearest living red agent.
* ``flank``: swing out to a control point set 90 degrees off the red-blue axis,
  then close in once near it or once red is within 1.5x engagement range.
* ``fallback``: retreat from the nearest living red agent, sliding along walls.

Combat is resolved each tick. Every living agent with an enemy in range kills
one uniformly chosen enemy in range with a fixed probability.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .trajectory import (DEFAULT_ARENA, DEFAULT_TICK_INTERVAL, STRATEGIES, AgentRecord, Match,
                         ManifestEntry, MatchMeta, Tick, check_match, write_dataset)

log = logging.getLogger(__name__)

SEPARATIONS = {"close": 80.0, "mid": 160.0, "far": 280.0}
DEFAULT_COUNTS = {"fallback": 11, "assault": 12, "flank": 13}


@dataclass(frozen=True)
class GenConfig:
    """Settings for one generated match. Distances in meters, times in seconds."""

    strategy: str = "assault"
    separation: str = "mid"
    arena: float = DEFAULT_ARENA
    tick_interval: float = DEFAULT_TICK_INTERVAL
    red_fireteams: tuple[int, ...] = (4, 4, 4)
    blue_fireteams: tuple[int, ...] = (4, 4, 3)
    red_speed: float = 0.4
    blue_speed: float = 0.6
    speed_jitter: float = 0.05  # fractional, per agent
    engagement_range: float = 60.0
    kill_probability: float = 0.03
    min_duration: float = 54.0
    max_duration: float = 468.0
    corner_margin: float = 12.0  # red force centroid offset from the (0, 0) corner
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.separation not in SEPARATIONS:
            raise ValueError(f"unknown separation {self.separation!r}")
        if not 0.0 <= self.kill_probability <= 1.0:
            raise ValueError("kill_probability must lie in [0, 1]")
        positive = (self.arena, self.tick_interval, self.red_speed, self.blue_speed,
                    self.engagement_range, self.max_duration)
        if min(positive) <= 0 or self.min_duration < 0 or self.speed_jitter < 0:
            raise ValueError("sizes, speeds, range and durations must be positive")
        if self.min_duration > self.max_duration:
            raise ValueError("min_duration exceeds max_duration")
        if not self.red_fireteams or not self.blue_fireteams or \
                min(self.red_fireteams + self.blue_fireteams) < 1:
            raise ValueError("every fireteam needs at least one agent")

    @property
    def separation_m(self) -> float:
        return SEPARATIONS[self.separation]


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 1e-12)


def _deploy(centroid: np.ndarray, axis: np.ndarray, teams: tuple[int, ...],
            rng: np.random.Generator) -> np.ndarray:
    """Fireteams abreast across ``axis``, members scattered around each team center."""
    perp = np.array([-axis[1], axis[0]])
    offsets = (np.arange(len(teams)) - (len(teams) - 1) / 2) * 30.0
    pos = [centroid + o * perp + rng.normal(0.0, 6.0, (n, 2)) for o, n in zip(offsets, teams)]
    return np.concatenate(pos)


def _nearest(src: np.ndarray, dst: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """For each source row, the position of the nearest living destination (self if none)."""
    if not alive.any():
        return src.copy()
    live = dst[alive]
    d = np.linalg.norm(src[:, None] - live[None], axis=-1)
    return live[np.argmin(d, axis=1)]


def _retreat(pos: np.ndarray, threat: np.ndarray, arena: float) -> np.ndarray:
    """Unit retreat directions that slide along the walls instead of pushing into them."""
    d = _unit(pos - threat)
    for k in range(2):
        blocked = ((pos[:, k] <= 1e-9) & (d[:, k] < 0)) | ((pos[:, k] >= arena - 1e-9) & (d[:, k] > 0))
        d[blocked, k] = 0.0
    stuck = np.linalg.norm(d, axis=1) < 1e-6
    if stuck.any():
        # cornered: run along the wall that leads away from the arena corner
        d[stuck] = _unit(np.array([arena / 2, arena / 2]) - pos[stuck]) * np.array([1.0, 0.0])
    return _unit(d)


def _combat(pos_a, alive_a, pos_b, alive_b, cfg: GenConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Kill masks for side b (shot by a) and side a (shot by b), resolved simultaneously."""
    d = np.linalg.norm(pos_a[:, None] - pos_b[None], axis=-1)
    in_range = (d <= cfg.engagement_range) & alive_a[:, None] & alive_b[None, :]
    killed_b = np.zeros(len(pos_b), bool)
    killed_a = np.zeros(len(pos_a), bool)
    # draws happen in a fixed order for every agent so the stream is layout-independent
    for i in range(len(pos_a)):
        u, pick = rng.random(), rng.random()
        targets = np.flatnonzero(in_range[i])
        if targets.size and u < cfg.kill_probability:
            killed_b[targets[int(pick * targets.size)]] = True
    for j in range(len(pos_b)):
        u, pick = rng.random(), rng.random()
        targets = np.flatnonzero(in_range[:, j])
        if targets.size and u < cfg.kill_probability:
            killed_a[targets[int(pick * targets.size)]] = True
    return killed_b, killed_a


def generate_match(config: GenConfig, match_id: str | None = None) -> Match:
    """Simulate one engagement; deterministic in ``config`` (including its seed)."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    arena, dt = cfg.arena, cfg.tick_interval
    axis = np.array([1.0, 1.0]) / math.sqrt(2)
    red_c = np.full(2, cfg.corner_margin) + rng.normal(0.0, 5.0, 2)
    blue_c = red_c + axis * cfg.separation_m
    red = np.clip(_deploy(red_c, axis, cfg.red_fireteams, rng), 0, arena)
    blue = np.clip(_deploy(blue_c, axis, cfg.blue_fireteams, rng), 0, arena)
    n_red, n_blue = len(red), len(blue)
    red_alive, blue_alive = np.ones(n_red, bool), np.ones(n_blue, bool)
    red_v = cfg.red_speed * (1 + cfg.speed_jitter * rng.uniform(-1, 1, n_red))
    blue_v = cfg.blue_speed * (1 + cfg.speed_jitter * rng.uniform(-1, 1, n_blue))

    # flank geometry: one side is picked at random, then mirrored if it leaves the arena
    side = 1.0 if rng.random() < 0.5 else -1.0
    perp = np.array([-axis[1], axis[0]]) * side
    reach = max(cfg.separation_m, 2.0 * cfg.engagement_range)
    control = red_c + perp * reach * 0.75 + axis * reach * 0.5
    if not np.all((control >= 0) & (control <= arena)):
        control = red_c - perp * reach * 0.75 + axis * reach * 0.5
    control = np.clip(control, 0, arena)
    formation = blue - blue.mean(axis=0)
    flanking = True

    ids = [f"r{i + 1}" for i in range(n_red)] + [f"b{i + 1}" for i in range(n_blue)]
    sides = ["red"] * n_red + ["blue"] * n_blue
    frames = []
    max_ticks = int(math.floor(cfg.max_duration / dt + 1e-9))
    min_ticks = int(math.ceil(cfg.min_duration / dt - 1e-9))

    def snapshot(t):
        recs = []
        for k, (aid, s) in enumerate(zip(ids, sides)):
            xy = red[k] if k < n_red else blue[k - n_red]
            alive = red_alive[k] if k < n_red else blue_alive[k - n_red]
            recs.append(AgentRecord(aid, s, float(xy[0]), float(xy[1]), 1.0 if alive else 0.0))
        frames.append(Tick(round(t * dt, 9), tuple(recs)))

    snapshot(0)
    for t in range(1, max_ticks + 1):
        # movement from the start-of-tick state
        jitter = rng.normal(0.0, 0.1, (n_red + n_blue, 2))
        red_dir = _unit(_nearest(red, blue, blue_alive) - red)
        threat = _nearest(blue, red, red_alive)
        if cfg.strategy == "assault":
            blue_dir = _unit(threat - blue)
        elif cfg.strategy == "fallback":
            blue_dir = _retreat(blue, threat, arena)
        else:
            if flanking:
                centroid = blue[blue_alive].mean(axis=0) if blue_alive.any() else blue.mean(axis=0)
                near_red = red_alive.any() and \
                    np.min(np.linalg.norm(red[red_alive] - centroid, axis=1)) < 1.5 * cfg.engagement_range
                if np.linalg.norm(control - centroid) < 15.0 or (near_red and t * dt > cfg.max_duration / 4):
                    flanking = False
            blue_dir = _unit(control + formation - blue) if flanking else _unit(threat - blue)
        red = np.where(red_alive[:, None],
                       np.clip(red + (red_dir * red_v[:, None] + jitter[:n_red]) * dt, 0, arena), red)
        blue = np.where(blue_alive[:, None],
                        np.clip(blue + (blue_dir * blue_v[:, None] + jitter[n_red:]) * dt, 0, arena), blue)
        killed_blue, killed_red = _combat(red, red_alive, blue, blue_alive, cfg, rng)
        red_alive &= ~killed_red
        blue_alive &= ~killed_blue
        snapshot(t)
        if t >= min_ticks and not (red_alive.any() and blue_alive.any()):
            break

    match = Match(MatchMeta(match_id or f"{cfg.strategy}-{cfg.seed}", cfg.strategy, arena, arena, dt,
                            None), tuple(frames))
    controlled = default_controlled_agent(match)
    match = Match(replace(match.meta, controlled_agent_id=controlled), match.ticks)
    return check_match(match)


def default_controlled_agent(match: Match) -> str:
    """The longest-surviving blue agent, smallest id among ties."""
    arr = match.arrays()
    best, best_life = None, -1
    for j, aid in enumerate(arr.agent_ids):
        if arr.sides[j] != "blue":
            continue
        alive = arr.health[:, j] > 0
        life = int(np.argmin(alive)) if not alive.all() else len(alive)
        if life > best_life or (life == best_life and _id_key(aid) < _id_key(best)):
            best, best_life = aid, life
    if best is None:
        raise ValueError("match has no blue agents")
    return best


def _id_key(aid: str):
    digits = "".join(ch for ch in aid if ch.isdigit())
    return (len(digits), digits, aid)


def dataset_configs(counts: dict[str, int] | None = None, seed: int = 0,
                    base: GenConfig = GenConfig()) -> list[tuple[str, GenConfig]]:
    """Per-match ids and configs. Separation cycles close, mid, far within each strategy."""
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    for s, n in counts.items():
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
        if n < 1:
            raise ValueError("counts must be positive")
    seeds = np.random.SeedSequence(seed).spawn(sum(counts.values()))
    out, k = [], 0
    for strategy in STRATEGIES:
        for i in range(counts.get(strategy, 0)):
            sep = ("close", "mid", "far")[i % 3]
            sub = int(seeds[k].generate_state(1)[0])
            out.append((f"{strategy}{i + 1:02d}",
                        replace(base, strategy=strategy, separation=sep, seed=sub)))
            k += 1
    return out


def generate_dataset(directory: str | Path, counts: dict[str, int] | None = None, seed: int = 0,
                     base: GenConfig = GenConfig(), workers: int = 1) -> list[ManifestEntry]:
    """Generate all matches and write them with a manifest into ``directory``."""
    jobs = dataset_configs(counts, seed, base)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            matches = list(pool.map(_generate_job, jobs))
    else:
        matches = [_generate_job(j) for j in jobs]
    return write_dataset(matches, directory)


def _generate_job(job: tuple[str, GenConfig]) -> Match:
    match_id, cfg = job
    return generate_match(cfg, match_id)


# -- summary statistics used by tests and reports ----------------------------------

def centroid_distance(match: Match) -> np.ndarray:
    """Per-tick distance between the living red and living blue centroids."""
    arr = match.arrays()
    out = np.full(len(arr.times), np.nan)
    red, blue = arr.sides == "red", arr.sides == "blue"
    for t in range(len(arr.times)):
        ra, ba = red & (arr.health[t] > 0), blue & (arr.health[t] > 0)
        if ra.any() and ba.any():
            out[t] = np.linalg.norm(arr.xy[t, ra].mean(axis=0) - arr.xy[t, ba].mean(axis=0))
    return out


def lateral_displacement(match: Match) -> np.ndarray:
    """Per-tick distance of the living blue centroid from the initial red-blue centroid axis."""
    arr = match.arrays()
    red, blue = arr.sides == "red", arr.sides == "blue"
    r0, b0 = arr.xy[0, red].mean(axis=0), arr.xy[0, blue].mean(axis=0)
    u = _unit(b0 - r0)
    out = np.full(len(arr.times), np.nan)
    for t in range(len(arr.times)):
        ba = blue & (arr.health[t] > 0)
        if ba.any():
            rel = arr.xy[t, ba].mean(axis=0) - r0
            out[t] = abs(rel[0] * u[1] - rel[1] * u[0])
    return out
