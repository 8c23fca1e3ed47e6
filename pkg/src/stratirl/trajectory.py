"""Match recordings: data model, line-delimited file format and validation.

A match file starts with one metadata line::

    #match match_id=m000 strategy_label=assault arena_width=340 arena_height=340 tick_interval=3 controlled_agent_id=b00

followed by one record per (tick, agent)::

    time,agent_id,side,x,y,health

Optional metadata keys are omitted when absent. Numbers are written in
positional decimal notation with the shortest representation that round-trips.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

SIDES = ("red", "blue")
STRATEGIES = ("assault", "flank", "fallback")

DEFAULT_ARENA = 340.0
DEFAULT_TICK_INTERVAL = 3.0

MANIFEST_NAME = "manifest.csv"
MATCH_SUFFIX = ".match"


class MatchFormatError(ValueError):
    """Malformed match file; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MatchValidationError(ValueError):
    def __init__(self, violations: Sequence[str]):
        super().__init__("invalid match: " + ", ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class AgentRecord:
    agent_id: str
    side: str
    x: float
    y: float
    health: float

    @property
    def alive(self) -> bool:
        return self.health > 0


@dataclass(frozen=True)
class Tick:
    time: float
    agents: tuple[AgentRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))

    def agent(self, agent_id: str) -> AgentRecord:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)


@dataclass(frozen=True)
class MatchMeta:
    match_id: str
    strategy_label: str | None = None
    arena_width: float = DEFAULT_ARENA
    arena_height: float = DEFAULT_ARENA
    tick_interval: float = DEFAULT_TICK_INTERVAL
    controlled_agent_id: str | None = None

    @property
    def arena_diagonal(self) -> float:
        return math.hypot(self.arena_width, self.arena_height)


@dataclass(frozen=True)
class Match:
    meta: MatchMeta
    ticks: tuple[Tick, ...]
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ticks", tuple(self.ticks))

    @property
    def match_id(self) -> str:
        return self.meta.match_id

    @property
    def agent_ids(self) -> tuple[str, ...]:
        return tuple(a.agent_id for a in self.ticks[0].agents)

    @property
    def duration(self) -> float:
        return self.ticks[-1].time - self.ticks[0].time

    def side_of(self, agent_id: str) -> str:
        return self.ticks[0].agent(agent_id).side

    def arrays(self) -> MatchArrays:
        """Dense per-tick arrays, cached; agents ordered as at tick 0."""
        cached = self._arrays.get("dense")
        if cached is None:
            cached = MatchArrays.from_match(self)
            self._arrays["dense"] = cached
        return cached


@dataclass(frozen=True)
class MatchArrays:
    agent_ids: tuple[str, ...]
    sides: np.ndarray  # (n_agents,) str
    times: np.ndarray  # (n_ticks,)
    xy: np.ndarray  # (n_ticks, n_agents, 2)
    health: np.ndarray  # (n_ticks, n_agents)

    @classmethod
    def from_match(cls, match: Match) -> MatchArrays:
        ids = match.agent_ids
        index = {aid: i for i, aid in enumerate(ids)}
        n_t, n_a = len(match.ticks), len(ids)
        xy = np.zeros((n_t, n_a, 2))
        health = np.zeros((n_t, n_a))
        for t, tick in enumerate(match.ticks):
            for a in tick.agents:
                j = index[a.agent_id]
                xy[t, j] = (a.x, a.y)
                health[t, j] = a.health
        sides = np.array([match.side_of(aid) for aid in ids])
        times = np.array([tk.time for tk in match.ticks])
        for arr in (xy, health, times):
            arr.setflags(write=False)
        return cls(ids, sides, times, xy, health)

    def index(self, agent_id: str) -> int:
        return self.agent_ids.index(agent_id)


# -- validation ---------------------------------------------------------------

def validate_match(match: Match) -> list[str]:
    """Return the names of all violated invariants (empty when valid)."""
    meta = match.meta
    violations: list[str] = []

    def flag(name):
        if name not in violations:
            violations.append(name)

    if not (meta.arena_width > 0 and meta.arena_height > 0):
        flag("arena size")
    if not meta.tick_interval > 0:
        flag("tick interval")
    if meta.strategy_label is not None and meta.strategy_label not in STRATEGIES:
        flag("strategy label")
    if not match.ticks:
        flag("empty match")
        return violations

    times = [tk.time for tk in match.ticks]
    ordered = all(b > a for a, b in zip(times, times[1:]))
    if not ordered:
        flag("time ordering")
    elif meta.tick_interval > 0:
        tol = 1e-6 * max(1.0, meta.tick_interval)
        if any(abs((b - a) - meta.tick_interval) > tol for a, b in zip(times, times[1:])):
            flag("tick interval")

    first = {a.agent_id: a for a in match.ticks[0].agents}
    last_health = {aid: a.health for aid, a in first.items()}
    for tick in match.ticks:
        if not tick.agents:
            flag("empty tick")
        ids = [a.agent_id for a in tick.agents]
        if len(set(ids)) != len(ids):
            flag("duplicate agent")
        if not set(first) <= set(ids):
            flag("agent continuity")
        for a in tick.agents:
            if a.side not in SIDES:
                flag("side value")
            elif a.agent_id in first and first[a.agent_id].side != a.side:
                flag("side consistency")
            if not 0.0 <= a.health <= 1.0:
                flag("health range")
            if not (0.0 <= a.x <= meta.arena_width and 0.0 <= a.y <= meta.arena_height):
                flag("arena bounds")
            prev = last_health.get(a.agent_id)
            if prev is not None and prev <= 0 and a.health > 0:
                flag("resurrection")
            last_health[a.agent_id] = a.health

    if meta.controlled_agent_id is not None and meta.controlled_agent_id not in first:
        flag("controlled agent")
    return violations


def check_match(match: Match) -> Match:
    violations = validate_match(match)
    if violations:
        raise MatchValidationError(violations)
    return match


# -- serialization ------------------------------------------------------------

def fmt_num(x: float) -> str:
    """Shortest positional decimal that round-trips to the same float."""
    s = np.format_float_positional(float(x), unique=True, trim="-")
    return "0" if s == "-0" else s


_META_KEYS = ("match_id", "strategy_label", "arena_width", "arena_height",
              "tick_interval", "controlled_agent_id")
_NUMERIC_META = {"arena_width", "arena_height", "tick_interval"}


def _check_token(value: str, what: str):
    if not value or any(c in value for c in ", =\n\r\t"):
        raise ValueError(f"{what} {value!r} contains a reserved character")


def write_match(match: Match) -> bytes:
    check_match(match)
    meta = match.meta
    parts = ["#match"]
    for key in _META_KEYS:
        value = getattr(meta, key)
        if value is None:
            continue
        if key in _NUMERIC_META:
            value = fmt_num(value)
        else:
            _check_token(value, key)
        parts.append(f"{key}={value}")
    lines = [" ".join(parts)]
    for tick in match.ticks:
        t = fmt_num(tick.time)
        for a in tick.agents:
            _check_token(a.agent_id, "agent_id")
            lines.append(",".join((t, a.agent_id, a.side, fmt_num(a.x), fmt_num(a.y),
                                   fmt_num(a.health))))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_float(text: str, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MatchFormatError(lineno, f"{what} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise MatchFormatError(lineno, f"{what} is not finite: {text!r}")
    return value


def parse_match(source: BinaryIO | bytes) -> Match:
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MatchFormatError(1, f"not UTF-8: {exc}") from None
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#match"):
        raise MatchFormatError(1, "missing '#match' metadata line")

    fields: dict[str, str] = {}
    for token in lines[0].split()[1:]:
        key, sep, value = token.partition("=")
        if not sep or key not in _META_KEYS:
            raise MatchFormatError(1, f"bad metadata token {token!r}")
        if key in fields:
            raise MatchFormatError(1, f"repeated metadata key {key!r}")
        fields[key] = value
    if "match_id" not in fields:
        raise MatchFormatError(1, "metadata lacks match_id")
    nums = {k: _parse_float(fields[k], 1, k) for k in _NUMERIC_META if k in fields}
    meta = MatchMeta(
        match_id=fields["match_id"],
        strategy_label=fields.get("strategy_label"),
        arena_width=nums.get("arena_width", DEFAULT_ARENA),
        arena_height=nums.get("arena_height", DEFAULT_ARENA),
        tick_interval=nums.get("tick_interval", DEFAULT_TICK_INTERVAL),
        controlled_agent_id=fields.get("controlled_agent_id"),
    )

    ticks: list[Tick] = []
    current: list[AgentRecord] = []
    current_time: float | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split(",")
        if len(cols) != 6:
            raise MatchFormatError(lineno, f"expected 6 fields, got {len(cols)}")
        t = _parse_float(cols[0], lineno, "time")
        record = AgentRecord(
            agent_id=cols[1],
            side=cols[2],
            x=_parse_float(cols[3], lineno, "x"),
            y=_parse_float(cols[4], lineno, "y"),
            health=_parse_float(cols[5], lineno, "health"),
        )
        if not record.agent_id:
            raise MatchFormatError(lineno, "empty agent_id")
        if current_time is not None and t != current_time:
            ticks.append(Tick(current_time, tuple(current)))
            current = []
        current_time = t
        current.append(record)
    if current_time is not None:
        ticks.append(Tick(current_time, tuple(current)))
    return check_match(Match(meta, tuple(ticks)))


def read_match(path: str | os.PathLike) -> Match:
    with open(path, "rb") as fh:
        return parse_match(fh)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_match(match: Match, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, write_match(match))


# -- datasets -----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    file: str
    match_id: str
    label: str | None


def write_dataset(matches: Iterable[Match], directory: str | os.PathLike) -> list[ManifestEntry]:
    """Write one file per match plus ``manifest.csv`` (file, match_id, label)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in matches:
        name = m.match_id + MATCH_SUFFIX
        save_match(m, directory / name)
        entries.append(ManifestEntry(name, m.match_id, m.meta.strategy_label))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "match_id", "label"])
    for e in entries:
        writer.writerow([e.file, e.match_id, e.label or ""])
    atomic_write_bytes(directory / MANIFEST_NAME, buf.getvalue().encode("utf-8"))
    return entries


def read_manifest(directory: str | os.PathLike) -> list[ManifestEntry]:
    path = Path(directory) / MANIFEST_NAME
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [ManifestEntry(r["file"], r["match_id"], r["label"] or None) for r in rows]


def read_dataset(directory: str | os.PathLike) -> list[Match]:
    directory = Path(directory)
    return [read_match(directory / e.file) for e in read_manifest(directory)]
