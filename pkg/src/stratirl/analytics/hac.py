"""Complete-linkage agglomerative clustering on a precomputed distance matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labeled import check_distance_matrix


@dataclass(frozen=True)
class Merge:
    a: int  # cluster ids: 0..n-1 are items, n+i is the cluster formed by merge i
    b: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    n: int
    merges: tuple[Merge, ...]

    def linkage(self) -> np.ndarray:
        """The merge list as an (n-1, 4) array in the usual linkage layout."""
        return np.array([[m.a, m.b, m.height, m.size] for m in self.merges], dtype=float).reshape(-1, 4)

    def cut(self, k: int) -> np.ndarray:
        """Cluster index per item for exactly ``k`` clusters.

        Clusters are numbered 0..k-1 in order of their smallest member.
        """
        if not 1 <= k <= self.n:
            raise ValueError(f"k must lie in [1, {self.n}]")
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        members = {i: i for i in range(self.n)}  # cluster id -> representative item
        for step, m in enumerate(self.merges[: self.n - k]):
            ra, rb = find(members[m.a]), find(members[m.b])
            parent[max(ra, rb)] = min(ra, rb)
            members[self.n + step] = min(ra, rb)
        roots = [find(i) for i in range(self.n)]
        order = {r: c for c, r in enumerate(dict.fromkeys(roots))}
        return np.array([order[r] for r in roots])

    def to_csv(self) -> bytes:
        lines = ["step,cluster_a,cluster_b,height,size"]
        for i, m in enumerate(self.merges):
            lines.append(f"{i},{m.a},{m.b},{m.height!r},{m.size}")
        return ("\n".join(lines) + "\n").encode("utf-8")


def hac_complete(D: np.ndarray) -> Dendrogram:
    """Merge the two closest clusters until one remains.

    Cluster distance is the largest pairwise item distance (complete linkage).
    Ties go to the pair with the smallest (lower id, higher id).
    """
    D = check_distance_matrix(D)
    n = D.shape[0]
    if n == 0:
        raise ValueError("empty distance matrix")
    active = {i: [i] for i in range(n)}
    link = {}
    for i in range(n):
        for j in range(i + 1, n):
            link[(i, j)] = D[i, j]
    merges = []
    for step in range(n - 1):
        (a, b), h = min(link.items(), key=lambda kv: (kv[1], kv[0]))
        new = n + step
        members = active.pop(a) + active.pop(b)
        link = {p: d for p, d in link.items() if a not in p and b not in p}
        for c, cm in active.items():
            link[(c, new)] = float(D[np.ix_(members, cm)].max())
        active[new] = members
        merges.append(Merge(a, b, float(h), len(members)))
    return Dendrogram(n, tuple(merges))


def cut_tree(D: np.ndarray, k: int) -> np.ndarray:
    return hac_complete(D).cut(k)
