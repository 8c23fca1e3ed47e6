"""Soft-margin SVMs on a precomputed Gram matrix, solved by SMO, combined one-vs-one."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from ..rkhs import KernelNumericError

TAU = 1e-12


@dataclass(frozen=True)
class SvmParams:
    C: float = 1.0
    tolerance: float = 1e-3
    max_passes: int = 100  # iteration cap is max_passes * n
    psd_tolerance: float = 1e-8

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")


@dataclass
class BinarySvm:
    alpha: np.ndarray
    y: np.ndarray  # +1 / -1
    b: float
    iterations: int
    converged: bool

    def decision(self, K_cols: np.ndarray) -> np.ndarray:
        """Decision values for test items; ``K_cols`` is (n_train, n_test)."""
        return (self.alpha * self.y) @ K_cols + self.b


def check_gram(K: np.ndarray, tolerance: float = 1e-8) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("Gram matrix must be square")
    if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max(initial=0))):
        raise KernelNumericError("Gram matrix is not symmetric")
    scale = max(1.0, float(np.abs(np.diag(K)).max(initial=0.0)))
    lam = np.linalg.eigvalsh((K + K.T) / 2).min(initial=0.0)
    if lam < -tolerance * scale:
        raise KernelNumericError(f"Gram matrix not PSD (min eigenvalue {lam:.3e})")
    return K


def smo(K: np.ndarray, y: np.ndarray, params: SvmParams = SvmParams()) -> BinarySvm:
    """Dual soft-margin SVM by SMO with maximal-violating-pair working sets.

    Minimizes ``0.5 a^T Q a - sum(a)`` with ``Q = yy^T * K``, ``0 <= a <= C``,
    ``y^T a = 0``. Stops when the KKT violation ``m(a) - M(a)`` drops below
    the tolerance.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    C = params.C
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient Q a - 1
    converged = False
    it = 0
    for it in range(params.max_passes * max(n, 1)):
        i, j, gap = _working_pair(alpha, G, y, C)
        if gap < params.tolerance:
            converged = True
            break
        a = K[i, i] + K[j, j] - 2 * K[i, j]
        a = a if a > 0 else TAU
        # step along y_i e_i - y_j e_j, then clip into the box
        old_i, old_j = alpha[i], alpha[j]
        b_dir = -y[i] * G[i] + y[j] * G[j]
        t = b_dir / a
        # bounds on t from both box constraints
        lo_i, hi_i = (0 - old_i, C - old_i) if y[i] > 0 else (old_i - C, old_i - 0)
        lo_j, hi_j = (old_j - C, old_j - 0) if y[j] > 0 else (0 - old_j, C - old_j)
        t = min(max(t, max(lo_i, lo_j)), min(hi_i, hi_j))
        alpha[i] = old_i + y[i] * t
        alpha[j] = old_j - y[j] * t
        alpha[i] = min(max(alpha[i], 0.0), C)
        alpha[j] = min(max(alpha[j], 0.0), C)
        G += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)
    return BinarySvm(alpha, y, _bias(alpha, G, y, C), it, converged)


def _up_low(alpha, y, C):
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return up, low


def _working_pair(alpha, G, y, C):
    up, low = _up_low(alpha, y, C)
    score = -y * G
    if not up.any() or not low.any():
        return 0, 0, 0.0
    i = int(np.flatnonzero(up)[np.argmax(score[up])])
    j = int(np.flatnonzero(low)[np.argmin(score[low])])
    return i, j, float(score[i] - score[j])


def _bias(alpha, G, y, C) -> float:
    free = (alpha > 0) & (alpha < C)
    yg = y * G
    if free.any():
        rho = float(yg[free].mean())
    else:
        up, low = _up_low(alpha, y, C)
        # rho lies between the extreme violator scores; take the midpoint
        score = -yg
        hi = score[up].max(initial=-np.inf)
        lo = score[low].min(initial=np.inf)
        finite = [v for v in (hi, lo) if np.isfinite(v)]
        rho = -float(np.mean(finite)) if finite else 0.0
    return -rho


def kkt_residual(model: BinarySvm, K: np.ndarray, C: float) -> float:
    """Largest violation of the KKT conditions, ``max(0, m(a) - M(a))``."""
    Q = (model.y[:, None] * model.y[None, :]) * K
    G = Q @ model.alpha - 1
    return max(0.0, _working_pair(model.alpha, G, model.y, C)[2])


@dataclass
class OvoSvm:
    classes: tuple
    pairs: list[tuple[int, int]]
    models: list[BinarySvm]
    indices: list[np.ndarray]  # training rows used by each pair

    def decision_matrix(self, K_test: np.ndarray) -> np.ndarray:
        """(n_test, n_pairs) decision values; positive favors the pair's first class."""
        return np.column_stack([m.decision(K_test[idx]) for m, idx in zip(self.models, self.indices)])

    def predict(self, K_test: np.ndarray) -> list:
        """Majority vote; ties go to the larger summed decision magnitude, then the first class.

        ``K_test`` is (n_train, n_test): Gram entries between training and test items.
        """
        F = self.decision_matrix(np.asarray(K_test, dtype=float))
        k = len(self.classes)
        out = []
        for row in F:
            votes = np.zeros(k)
            strength = np.zeros(k)
            for (a, b), f in zip(self.pairs, row):
                winner = a if f >= 0 else b
                votes[winner] += 1
                strength[a] += f
                strength[b] -= f
            best = np.flatnonzero(votes == votes.max())
            pick = best[np.argmax(strength[best])] if len(best) > 1 else best[0]
            out.append(self.classes[pick])
        return out


def svm_train_ovo(K: np.ndarray, labels: Sequence, params: SvmParams = SvmParams()) -> OvoSvm:
    """One binary SVM per class pair on the precomputed Gram ``K``."""
    K = check_gram(K, params.psd_tolerance)
    labels = list(labels)
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    lab = np.array([classes.index(c) for c in labels])
    pairs, models, indices = [], [], []
    for a, b in combinations(range(len(classes)), 2):
        idx = np.flatnonzero((lab == a) | (lab == b))
        y = np.where(lab[idx] == a, 1.0, -1.0)
        models.append(smo(K[np.ix_(idx, idx)], y, params))
        pairs.append((a, b))
        indices.append(idx)
    return OvoSvm(classes, pairs, models, indices)


def median_bandwidth(D: np.ndarray) -> float:
    off = D[~np.eye(D.shape[0], dtype=bool)]
    off = off[off > 0]
    return float(np.median(off)) if off.size else 1.0


def gaussian_of_distance(D: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-(D ** 2) / (2 * bandwidth ** 2))
