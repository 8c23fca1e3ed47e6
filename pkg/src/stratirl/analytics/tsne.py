"""Exact t-SNE on a precomputed distance matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labeled import check_distance_matrix


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 5.0
    iterations: int = 1000
    learning_rate: float = 10.0  # larger steps oscillate once clusters tighten (n ~ 36)
    exaggeration: float = 4.0
    exaggeration_iters: int = 100
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    seed: int = 0


@dataclass
class TsneResult:
    embedding: np.ndarray  # (n, 2)
    kl: np.ndarray  # KL(P || Q) after every iteration, without exaggeration


def conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-10,
                           max_steps: int = 200) -> np.ndarray:
    """Row-stochastic P(j|i) with per-row precision found by bisection on the entropy."""
    n = D.shape[0]
    target = np.log(perplexity)
    sq = D ** 2
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(sq[i], i)
        d = d - d.min()
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_steps):
            w = np.exp(-d * beta)
            s = w.sum()
            p = w / s
            H = np.log(s) + beta * float(d @ p)
            if abs(H - target) < tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        P[i, np.arange(n) != i] = p
    return P


def joint_affinities(D: np.ndarray, perplexity: float) -> np.ndarray:
    P = conditional_affinities(D, perplexity)
    P = (P + P.T) / (2 * D.shape[0])
    return np.maximum(P, 1e-12)


def _kl_and_grad(P: np.ndarray, Y: np.ndarray, exaggeration: float = 1.0):
    diff = Y[:, None, :] - Y[None, :, :]
    num = 1.0 / (1.0 + (diff ** 2).sum(-1))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = ~np.eye(len(Y), dtype=bool)
    kl = float((P[mask] * np.log(P[mask] / Q[mask])).sum())
    W = (exaggeration * P - Q) * num
    np.fill_diagonal(W, 0.0)
    grad = 4.0 * (W[:, :, None] * diff).sum(axis=1)
    return kl, grad


def tsne(D: np.ndarray, params: TsneParams = TsneParams()) -> TsneResult:
    """Embed the items of ``D`` in two dimensions.

    Plain gradient descent with momentum (no per-parameter gains), early
    exaggeration for the first ``exaggeration_iters`` steps.
    """
    D = check_distance_matrix(D)
    n = D.shape[0]
    if n < 4:
        raise ValueError("t-SNE needs at least 4 items")
    if not 0 < params.perplexity < n:
        raise ValueError("perplexity must lie in (0, n)")
    P = joint_affinities(D, params.perplexity)
    rng = np.random.default_rng(params.seed)
    Y = rng.normal(0.0, 1e-4, (n, 2))
    update = np.zeros_like(Y)
    kl_hist = np.empty(params.iterations)
    for it in range(params.iterations):
        ex = params.exaggeration if it < params.exaggeration_iters else 1.0
        mom = params.momentum if it < params.momentum_switch else params.final_momentum
        _, grad = _kl_and_grad(P, Y, ex)
        update = mom * update - params.learning_rate * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        kl_hist[it] = _kl_and_grad(P, Y)[0]
    return TsneResult(Y, kl_hist)


def embedding_csv(result: TsneResult, ids, labels) -> bytes:
    lines = ["match_id,label,x,y"]
    for mid, lab, (x, y) in zip(ids, labels, result.embedding):
        lines.append(f"{mid},{lab},{float(x)!r},{float(y)!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")
