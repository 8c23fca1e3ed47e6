"""Leave-one-out classification and cluster composition reports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..trajectory import STRATEGIES
from .labeled import LabeledSet, distances_from_gram
from .svm import SvmParams, check_gram, gaussian_of_distance, median_bandwidth, svm_train_ovo

KERNELS = ("linear", "gaussian")


@dataclass
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray  # (true, predicted)

    @classmethod
    def from_predictions(cls, truth: Sequence[str], predicted: Sequence[str],
                         labels: Sequence[str] = STRATEGIES) -> ConfusionMatrix:
        labels = tuple(labels)
        counts = np.zeros((len(labels), len(labels)), dtype=int)
        for t, p in zip(truth, predicted):
            counts[labels.index(t), labels.index(p)] += 1
        return cls(labels, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def to_csv(self) -> bytes:
        lines = ["true\\predicted," + ",".join(self.labels)]
        for lab, row in zip(self.labels, self.counts):
            lines.append(lab + "," + ",".join(str(int(c)) for c in row))
        return ("\n".join(lines) + "\n").encode("utf-8")


def loo_predictions(K: np.ndarray, labels: Sequence[str], params: SvmParams = SvmParams(),
                    kernel: str = "linear") -> list[str]:
    """Held-out prediction for every item, training on the other n-1.

    ``K`` holds RKHS inner products. With ``kernel="gaussian"`` the SVM uses
    ``exp(-d^2 / 2h^2)`` over induced distances, ``h`` the median training
    distance of each fold.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    K = check_gram(K, params.psd_tolerance)
    labels = list(labels)
    n = len(labels)
    D = distances_from_gram(K) if kernel == "gaussian" else None
    out = []
    for i in range(n):
        train = np.array([j for j in range(n) if j != i])
        if kernel == "linear":
            Kf = K
        else:
            h = median_bandwidth(D[np.ix_(train, train)])
            Kf = gaussian_of_distance(D, h)
        model = svm_train_ovo(Kf[np.ix_(train, train)], [labels[j] for j in train], params)
        out.append(model.predict(Kf[np.ix_(train, [i])])[0])
    return out


def loo_evaluate(labeled: LabeledSet, params: SvmParams = SvmParams(), kernel: str = "linear",
                 gram: np.ndarray | None = None) -> tuple[float, ConfusionMatrix]:
    """Leave-one-out accuracy and confusion matrix of the one-vs-one SVM."""
    labels = labeled.labels
    if len(labels) < len(set(labels)) + 1:
        raise ValueError("too few items for leave-one-out")
    K = labeled.gram() if gram is None else gram
    predicted = loo_predictions(K, labels, params, kernel)
    cm = ConfusionMatrix.from_predictions(labels, predicted)
    return cm.accuracy, cm


@dataclass
class ClusterReport:
    labels: tuple[str, ...]
    counts: np.ndarray  # (cluster, label)

    @classmethod
    def build(cls, assignment: Sequence[int], item_labels: Sequence[str],
              labels: Sequence[str] = STRATEGIES) -> ClusterReport:
        labels = tuple(labels)
        k = int(max(assignment)) + 1
        counts = np.zeros((k, len(labels)), dtype=int)
        for c, lab in zip(assignment, item_labels):
            counts[int(c), labels.index(lab)] += 1
        return cls(labels, counts)

    def purity(self) -> np.ndarray:
        """Share of each label within each cluster (rows sum to 1)."""
        sizes = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, sizes, out=np.zeros(self.counts.shape), where=sizes > 0)

    def concentration(self) -> np.ndarray:
        """Share of each label's items falling in each cluster (columns sum to 1)."""
        totals = self.counts.sum(axis=0, keepdims=True)
        return np.divide(self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)

    def top_concentration(self, label: str) -> tuple[int, float]:
        """The cluster holding most of ``label`` and the fraction of that label it holds."""
        col = self.concentration()[:, self.labels.index(label)]
        c = int(np.argmax(col))
        return c, float(col[c])

    def to_csv(self) -> bytes:
        head = ["cluster", "size"] + [f"n_{l}" for l in self.labels] + \
            [f"purity_{l}" for l in self.labels] + [f"share_of_{l}" for l in self.labels]
        lines = [",".join(head)]
        pur, con = self.purity(), self.concentration()
        for c in range(self.counts.shape[0]):
            row = [str(c), str(int(self.counts[c].sum()))]
            row += [str(int(x)) for x in self.counts[c]]
            row += [f"{x:.4f}" for x in pur[c]] + [f"{x:.4f}" for x in con[c]]
            lines.append(",".join(row))
        return ("\n".join(lines) + "\n").encode("utf-8")


def cluster_report(assignment: Sequence[int], item_labels: Sequence[str]) -> ClusterReport:
    return ClusterReport.build(assignment, item_labels)
