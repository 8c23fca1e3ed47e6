"""Labeled collections of per-match RKHS vectors and their distance matrices."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..rkhs import KernelNumericError, RkhsVector, vector_gram
from ..trajectory import STRATEGIES

ROLES = ("behavior", "reward")


@dataclass(frozen=True)
class LabeledItem:
    match_id: str
    label: str
    vector: RkhsVector


@dataclass(frozen=True)
class LabeledSet:
    items: tuple[LabeledItem, ...]
    role: str

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        ids = [it.match_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate match ids")
        if any(it.label not in STRATEGIES for it in self.items):
            raise ValueError("unknown strategy label")
        if self.items and any(it.vector.spec != self.items[0].vector.spec for it in self.items):
            raise ValueError("vectors use different kernel specs")

    def __len__(self):
        return len(self.items)

    @property
    def match_ids(self) -> list[str]:
        return [it.match_id for it in self.items]

    @property
    def labels(self) -> list[str]:
        return [it.label for it in self.items]

    @property
    def vectors(self) -> list[RkhsVector]:
        return [it.vector for it in self.items]

    def gram(self) -> np.ndarray:
        if not self.items:
            raise ValueError("empty labeled set")
        return vector_gram(self.vectors)


def distances_from_gram(G: np.ndarray, tolerance: float = 1e-9) -> np.ndarray:
    """Induced-norm distances ``sqrt(G_ii + G_jj - 2 G_ij)``, exactly symmetric with zero diagonal."""
    G = np.asarray(G, dtype=float)
    diag = np.diag(G)
    sq = diag[:, None] + diag[None, :] - 2.0 * G
    scale = max(1.0, float(np.abs(diag).max(initial=0.0)))
    if sq.min(initial=0.0) < -tolerance * scale:
        raise KernelNumericError(f"negative squared distance {sq.min():.3e}")
    D = np.sqrt(np.clip(sq, 0.0, None))
    D = np.triu(D, 1)
    return D + D.T


def distance_matrix(labeled: LabeledSet | Sequence[RkhsVector]) -> np.ndarray:
    """Pairwise RKHS distances between the set's vectors."""
    vectors = labeled.vectors if isinstance(labeled, LabeledSet) else list(labeled)
    if not vectors:
        raise ValueError("empty set")
    return distances_from_gram(vector_gram(vectors))


def check_distance_matrix(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.array_equal(D, D.T):
        raise ValueError("distance matrix is not symmetric")
    if (D < 0).any() or not np.isfinite(D).all():
        raise ValueError("distance matrix has negative or non-finite entries")
    if np.any(np.diag(D) != 0):
        raise ValueError("distance matrix has a nonzero diagonal")
    return D


def matrix_csv(M: np.ndarray, ids: Sequence[str]) -> bytes:
    buf = io.StringIO()
    buf.write("match_id," + ",".join(ids) + "\n")
    for mid, row in zip(ids, M):
        buf.write(mid + "," + ",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue().encode("utf-8")
