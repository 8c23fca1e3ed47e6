"""Figure rendering. All figures are written as SVG with stable ids and no timestamps."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from scipy.cluster.hierarchy import dendrogram as _scipy_dendrogram  # noqa: E402

from .trajectory import STRATEGIES, atomic_write_bytes  # noqa: E402

LABEL_COLORS = {"assault": "tab:red", "flank": "tab:green", "fallback": "tab:blue"}
_RC = {"svg.hashsalt": "stratirl", "svg.fonttype": "path", "path.simplify": False}


def _save(fig, path) -> None:
    import io
    buf = io.BytesIO()
    with plt.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_dendrogram(linkage: np.ndarray, ids: Sequence[str], labels: Sequence[str], path,
                    title: str = "", k: int | None = None) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(10, 4.5))
        threshold = None
        if k is not None and 1 < k <= len(ids):
            heights = linkage[:, 2]
            threshold = float((heights[-k] + heights[-k + 1]) / 2) if k < len(ids) else 0.0
        _scipy_dendrogram(linkage, labels=list(ids), ax=ax, color_threshold=threshold,
                          leaf_rotation=90, leaf_font_size=7)
        by_id = dict(zip(ids, labels))
        for tick in ax.get_xticklabels():
            tick.set_color(LABEL_COLORS.get(by_id.get(tick.get_text()), "black"))
        if threshold:
            ax.axhline(threshold, color="gray", lw=0.8, ls="--")
        ax.set_ylabel("complete-linkage distance")
        ax.set_title(title)
        fig.tight_layout()
    _save(fig, path)


def plot_embedding(xy: np.ndarray, labels: Sequence[str], path, title: str = "") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        labels = np.asarray(labels)
        for lab in STRATEGIES:
            m = labels == lab
            if m.any():
                ax.scatter(xy[m, 0], xy[m, 1], s=24, c=LABEL_COLORS[lab], label=lab)
        ax.legend(frameon=False)
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.tight_layout()
    _save(fig, path)


def plot_confusion(counts: np.ndarray, labels: Sequence[str], path, title: str = "") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3.6))
        ax.imshow(counts, cmap="Blues")
        for (i, j), c in np.ndenumerate(counts):
            ax.text(j, i, str(int(c)), ha="center", va="center")
        ax.set_xticks(range(len(labels)), labels)
        ax.set_yticks(range(len(labels)), labels)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title)
        fig.tight_layout()
    _save(fig, path)


def plot_overlay(expert_xy: np.ndarray, policy_xy: np.ndarray, arena: tuple[float, float], path,
                 others: np.ndarray | None = None, title: str = "") -> None:
    """Expert and policy paths, each colored from early (light) to late (dark)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        if others is not None:
            for k in range(others.shape[1]):
                ax.plot(others[:, k, 0], others[:, k, 1], color="0.85", lw=0.6)
        for xy, cmap, name in ((expert_xy, "Blues", "expert"), (policy_xy, "Oranges", "policy")):
            seg = np.stack([xy[:-1], xy[1:]], axis=1)
            lc = LineCollection(seg, cmap=cmap, norm=plt.Normalize(-0.3 * len(seg), len(seg)), lw=2)
            lc.set_array(np.arange(len(seg), dtype=float))
            ax.add_collection(lc)
            ax.plot(*xy[0], "o", color=plt.get_cmap(cmap)(0.9), ms=4, label=f"{name} start")
        ax.set_xlim(0, arena[0])
        ax.set_ylim(0, arena[1])
        ax.set_aspect("equal")
        ax.legend(frameon=False, loc="upper left")
        ax.set_title(title)
        fig.tight_layout()
    _save(fig, path)


def plot_bench(returns: dict[str, np.ndarray], path, title: str = "") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        names = list(returns)
        ax.boxplot([returns[n] for n in names])
        ax.set_xticks(range(1, len(names) + 1), names)
        ax.set_ylabel("expected discounted return")
        ax.set_title(title)
        fig.tight_layout()
    _save(fig, path)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
