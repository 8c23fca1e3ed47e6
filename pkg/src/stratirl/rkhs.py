"""State features, the Gaussian state kernel and finite RKHS expansions.

Every object that lives in the kernel's feature space (kernel expectations of
observed or simulated behavior, learned reward functions) is an
:class:`RkhsVector`: a weighted sum of kernel sections anchored at the six
scene features of some states.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.spatial.distance import cdist

if TYPE_CHECKING:
    from .replay import MdpState

FEATURE_NAMES = (
    "min_dist_red",
    "max_dist_red",
    "min_dist_blue",
    "max_dist_blue",
    "min_cos_rb",
    "max_cos_rb",
)
N_FEATURES = len(FEATURE_NAMES)

DEFAULT_BANDWIDTH = 0.25
DEFAULT_T = 20
MERGE_DECIMALS = 12
_CHUNK = 2048


class KernelNumericError(ArithmeticError):
    """An inner product came out clearly negative (kernel not PSD)."""


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float = DEFAULT_BANDWIDTH
    arena_width: float = 340.0
    arena_height: float = 340.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not (self.arena_width > 0 and self.arena_height > 0):
            raise ValueError("arena dimensions must be positive")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.arena_width, self.arena_height)


# -- features -----------------------------------------------------------------

def scene_features(ctrl_xy, red_xy, red_alive, blue_xy, blue_alive, diagonal):
    """Vectorized six-feature descriptor.

    Args:
        ctrl_xy: (n, 2) controlled-agent positions.
        red_xy, blue_xy: (n, R, 2) and (n, B, 2) positions of the other agents.
        red_alive, blue_alive: boolean masks matching the position arrays.
        diagonal: distance normalizer (arena diagonal).

    Returns:
        (n, 6) array in [0, 1].
    """
    ctrl_xy = np.asarray(ctrl_xy, dtype=float)
    n = ctrl_xy.shape[0]
    out = np.empty((n, N_FEATURES))

    def directions(xy, alive):
        d = xy - ctrl_xy[:, None, :]
        dist = np.hypot(d[..., 0], d[..., 1])
        valid = alive & (dist > 1e-12)
        unit = d / np.where(valid, dist, 1.0)[..., None]
        return dist, unit, valid

    dist_r, unit_r, valid_r = directions(red_xy, red_alive)
    dist_b, unit_b, valid_b = directions(blue_xy, blue_alive)

    for col, dist, alive in ((0, dist_r, red_alive), (2, dist_b, blue_alive)):
        if dist.shape[1] == 0:
            out[:, col] = out[:, col + 1] = 1.0
            continue
        any_alive = alive.any(axis=1)
        lo = np.where(alive, dist, np.inf).min(axis=1)
        hi = np.where(alive, dist, -np.inf).max(axis=1)
        out[:, col] = np.where(any_alive, lo / diagonal, 1.0)
        out[:, col + 1] = np.where(any_alive, hi / diagonal, 1.0)

    if unit_r.shape[1] and unit_b.shape[1]:
        cos = np.einsum("nrk,nbk->nrb", unit_r, unit_b)
        pair = valid_r[:, :, None] & valid_b[:, None, :]
        has = pair.any(axis=(1, 2))
        lo = np.where(pair, cos, np.inf).min(axis=(1, 2))
        hi = np.where(pair, cos, -np.inf).max(axis=(1, 2))
        out[:, 4] = np.where(has, (lo + 1) / 2, 0.5)
        out[:, 5] = np.where(has, (hi + 1) / 2, 0.5)
    else:
        out[:, 4] = out[:, 5] = 0.5
    np.clip(out, 0.0, 1.0, out=out)
    return out


def featurize(state: MdpState, spec: KernelSpec) -> np.ndarray:
    """Six features of one MDP state, computed from living agents only."""
    red = [a for a in state.others if a.side == "red"]
    blue = [a for a in state.others if a.side == "blue"]

    def pack(agents):
        xy = np.array([[a.x, a.y] for a in agents], dtype=float).reshape(1, -1, 2)
        alive = np.array([a.health > 0 for a in agents], dtype=bool).reshape(1, -1)
        return xy, alive

    rxy, ralive = pack(red)
    bxy, balive = pack(blue)
    ctrl = np.array([[state.controlled_x, state.controlled_y]])
    return scene_features(ctrl, rxy, ralive, bxy, balive, spec.diagonal)[0]


# -- kernel -------------------------------------------------------------------

def gaussian_gram(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth * bandwidth))


def kernel(s: MdpState, s2: MdpState, spec: KernelSpec) -> float:
    return float(gaussian_gram(featurize(s, spec), featurize(s2, spec), spec.bandwidth)[0, 0])


class RkhsVector:
    """Finite expansion ``sum_i weights[i] * k(anchors[i], .)``.

    Anchors are feature vectors. Arithmetic merges anchors that coincide to
    ``MERGE_DECIMALS`` places and drops exact zero weights.
    """

    __slots__ = ("anchors", "weights", "spec")

    def __init__(self, anchors, weights, spec: KernelSpec):
        anchors = np.asarray(anchors, dtype=float)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if anchors.ndim == 1:
            anchors = anchors.reshape(len(weights), -1) if len(weights) else anchors.reshape(0, 0)
        if anchors.shape[0] != weights.shape[0]:
            raise ValueError(f"{anchors.shape[0]} anchors but {weights.shape[0]} weights")
        self.anchors = anchors
        self.weights = weights
        self.spec = spec

    @classmethod
    def zero(cls, spec: KernelSpec, dim: int = N_FEATURES) -> RkhsVector:
        return cls(np.zeros((0, dim)), np.zeros(0), spec)

    @classmethod
    def unit(cls, feature, spec: KernelSpec, weight: float = 1.0) -> RkhsVector:
        """The kernel section ``weight * k(feature, .)``."""
        return cls(np.asarray(feature, dtype=float).reshape(1, -1), [weight], spec)

    def __len__(self):
        return self.weights.shape[0]

    def __repr__(self):
        return f"RkhsVector(n={len(self)}, dim={self.anchors.shape[1] if self.anchors.ndim == 2 else 0})"

    def _check(self, other: RkhsVector):
        if not isinstance(other, RkhsVector):
            return NotImplemented
        if other.spec != self.spec:
            raise ValueError(f"kernel spec mismatch: {self.spec} vs {other.spec}")
        return None

    def compact(self) -> RkhsVector:
        if len(self) == 0:
            return self
        keys = np.round(self.anchors, MERGE_DECIMALS) + 0.0
        _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        weights = np.bincount(inverse.reshape(-1), weights=self.weights, minlength=len(first))
        keep = weights != 0
        return RkhsVector(self.anchors[first][keep], weights[keep], self.spec)

    def __add__(self, other: RkhsVector) -> RkhsVector:
        if (res := self._check(other)) is not None:
            return res
        if len(self) == 0:
            return other.compact()
        if len(other) == 0:
            return self.compact()
        return RkhsVector(np.vstack([self.anchors, other.anchors]),
                          np.concatenate([self.weights, other.weights]), self.spec).compact()

    def __neg__(self) -> RkhsVector:
        return RkhsVector(self.anchors, -self.weights, self.spec)

    def __sub__(self, other: RkhsVector) -> RkhsVector:
        if (res := self._check(other)) is not None:
            return res
        return self + (-other)

    def __mul__(self, scalar: float) -> RkhsVector:
        return RkhsVector(self.anchors, self.weights * float(scalar), self.spec)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> RkhsVector:
        return self * (1.0 / float(scalar))

    def __call__(self, features) -> np.ndarray:
        return evaluate_features(self, features)


def _weighted_gram(a_anchors, a_w, b_anchors, b_w, bandwidth) -> float:
    total = 0.0
    for i in range(0, a_anchors.shape[0], _CHUNK):
        k = gaussian_gram(a_anchors[i:i + _CHUNK], b_anchors, bandwidth)
        total += float(a_w[i:i + _CHUNK] @ (k @ b_w))
    return total


def dot(u: RkhsVector, v: RkhsVector) -> float:
    if u.spec != v.spec:
        raise ValueError(f"kernel spec mismatch: {u.spec} vs {v.spec}")
    if len(u) == 0 or len(v) == 0:
        return 0.0
    return _weighted_gram(u.anchors, u.weights, v.anchors, v.weights, u.spec.bandwidth)


def _sqrt_checked(value: float, scale: float) -> float:
    tol = 1e-9 * max(1.0, scale)
    if value < -tol:
        raise KernelNumericError(f"negative squared norm {value:.3e}")
    return math.sqrt(max(value, 0.0))


def norm(v: RkhsVector) -> float:
    return _sqrt_checked(dot(v, v), float(np.abs(v.weights).sum()) ** 2)


def distance(u: RkhsVector, v: RkhsVector) -> float:
    return norm(u - v)


def evaluate_features(v: RkhsVector, features) -> np.ndarray:
    """Values of ``v`` at feature rows ``features`` (n, d)."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if len(v) == 0:
        return np.zeros(features.shape[0])
    out = np.empty(features.shape[0])
    for i in range(0, features.shape[0], _CHUNK):
        out[i:i + _CHUNK] = gaussian_gram(features[i:i + _CHUNK], v.anchors, v.spec.bandwidth) @ v.weights
    return out


def evaluate(v: RkhsVector, state: MdpState) -> float:
    """``<v, k(state, .)>``: the value of reward ``v`` at one MDP state."""
    return float(evaluate_features(v, featurize(state, v.spec))[0])


# -- expectations -------------------------------------------------------------

def _episode_features(episode, spec: KernelSpec) -> np.ndarray:
    if isinstance(episode, np.ndarray):
        return np.atleast_2d(episode).astype(float)
    rows = [featurize(s, spec) for s in episode]
    return np.array(rows).reshape(len(rows), -1)


def empirical_expectation(episodes: Sequence, spec: KernelSpec, T: int = DEFAULT_T) -> RkhsVector:
    """Kernel expectation estimate with weight ``T / N`` on every visited state.

    ``episodes`` holds per-episode state sequences, given either as lists of
    :class:`~stratirl.replay.MdpState` or as (L, d) feature arrays. ``N`` is the
    total state count, so longer episodes carry proportionally more mass.
    """
    if len(episodes) == 0:
        raise ValueError("empirical_expectation needs at least one episode")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    feats = [_episode_features(ep, spec) for ep in episodes]
    feats = [f for f in feats if f.shape[0]]
    if not feats:
        raise ValueError("episodes contain no states")
    stacked = np.vstack(feats)
    weights = np.full(stacked.shape[0], T / stacked.shape[0])
    return RkhsVector(stacked, weights, spec).compact()


def policy_expectation(env, policy, spec: KernelSpec, episodes: int = 1, horizon: int | None = DEFAULT_T,
                       seed=None, starts=None, T: int = DEFAULT_T) -> RkhsVector:
    """Estimate a policy's kernel expectation from simulated rollouts.

    Starts are drawn uniformly from ``starts`` (default: the environment's
    start states); the first action comes from the policy itself.
    """
    from .replay import simulate

    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    pool = env.start_states() if starts is None else np.atleast_2d(starts)
    s0 = pool[rng.integers(len(pool), size=episodes)]
    sim = simulate(env, policy, s0, None, horizon, rng)
    eps = [env.features(sim.episode(i)) for i in range(episodes)]
    return empirical_expectation(eps, spec, T=T)


def gram(items, spec: KernelSpec) -> np.ndarray:
    """Gram matrix over feature rows (an (n, d) array) or over RkhsVectors."""
    if isinstance(items, np.ndarray) or (len(items) and not isinstance(items[0], RkhsVector)):
        feats = np.atleast_2d(np.asarray(items, dtype=float))
        if feats.shape[0] == 0:
            raise ValueError("gram of an empty list")
        return gaussian_gram(feats, feats, spec.bandwidth)
    return vector_gram(items)


def vector_gram(vectors: Sequence[RkhsVector]) -> np.ndarray:
    """``G[i, j] = dot(v_i, v_j)`` computed over the stacked anchor set."""
    if not vectors:
        raise ValueError("gram of an empty list")
    spec = vectors[0].spec
    if any(v.spec != spec for v in vectors):
        raise ValueError("vectors use different kernel specs")
    nonempty = [v for v in vectors if len(v)]
    n = len(vectors)
    if not nonempty:
        return np.zeros((n, n))
    anchors = np.vstack([v.anchors for v in nonempty])
    # sparse block layout: column j carries the weights of vector j
    W = np.zeros((anchors.shape[0], n))
    row = 0
    for j, v in enumerate(vectors):
        W[row:row + len(v), j] = v.weights
        row += len(v)
    # merge shared anchors so the pairwise kernel matrix is as small as possible
    keys = np.round(anchors, MERGE_DECIMALS) + 0.0
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    Wm = np.zeros((len(first), n))
    np.add.at(Wm, inverse.reshape(-1), W)
    A = anchors[first]
    G = np.zeros((n, n))
    for i in range(0, A.shape[0], _CHUNK):
        K = gaussian_gram(A[i:i + _CHUNK], A, spec.bandwidth)
        G += Wm[i:i + _CHUNK].T @ (K @ Wm)
    return (G + G.T) / 2


# -- persistence --------------------------------------------------------------

def write_rkhs(v: RkhsVector, role: str) -> bytes:
    """Header line with role and kernel spec, then one ``weight,f1..fd`` row per anchor."""
    if any(c in role for c in " =\n"):
        raise ValueError(f"bad role tag {role!r}")
    dim = v.anchors.shape[1] if len(v) else N_FEATURES
    s = v.spec
    buf = io.StringIO()
    buf.write(f"#rkhs role={role} bandwidth={s.bandwidth!r} arena_width={s.arena_width!r} "
              f"arena_height={s.arena_height!r} dim={dim} n={len(v)}\n")
    for w, row in zip(v.weights, v.anchors):
        buf.write(",".join(repr(float(x)) for x in (w, *row)) + "\n")
    return buf.getvalue().encode("utf-8")


def parse_rkhs(data: bytes) -> tuple[RkhsVector, str]:
    lines = data.decode("utf-8").splitlines()
    if not lines or not lines[0].startswith("#rkhs"):
        raise ValueError("missing '#rkhs' header")
    head = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    spec = KernelSpec(float(head["bandwidth"]), float(head["arena_width"]), float(head["arena_height"]))
    dim, n = int(head["dim"]), int(head["n"])
    rows = [list(map(float, ln.split(","))) for ln in lines[1:] if ln.strip()]
    if len(rows) != n or any(len(r) != dim + 1 for r in rows):
        raise ValueError("rkhs body does not match header")
    arr = np.array(rows).reshape(n, dim + 1)
    return RkhsVector(arr[:, 1:], arr[:, 0], spec), head["role"]


def read_rkhs(path) -> tuple[RkhsVector, str]:
    with open(path, "rb") as fh:
        return parse_rkhs(fh.read())


def random_reward(features_pool: np.ndarray, spec: KernelSpec, rng: np.random.Generator,
                  n_anchors: int = 10, unit_norm: bool = False) -> RkhsVector:
    """Random expansion over anchors drawn from ``features_pool``; weights uniform in [-1, 1]."""
    pool = np.atleast_2d(features_pool)
    idx = rng.choice(len(pool), size=min(n_anchors, len(pool)), replace=False)
    v = RkhsVector(pool[idx], rng.uniform(-1.0, 1.0, size=len(idx)), spec).compact()
    if unit_norm:
        nv = norm(v)
        if nv > 0:
            v = v / nv
    return v

