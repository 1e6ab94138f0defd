"""Spike-train recovery scores: tolerance-matched F1 and the smoothed CP score."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .operator import ActivationSet


@dataclass
class MatchConfig:
    tol: float = 0
    require_same_neuron: bool = True

    def __post_init__(self):
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass
class CPConfig:
    kernel_width: int = 1
    binarize: bool = False

    def __post_init__(self):
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ValueError("kernel_width must be a positive odd integer")

    @classmethod
    def for_shape_length(cls, t: int, binarize: bool = False) -> "CPConfig":
        w = max(1, int(round(t / 2)))
        return cls(w if w % 2 else w + 1, binarize)


def _match_count(truth: np.ndarray, est: np.ndarray, tol: float) -> int:
    free = sorted(truth.tolist())
    hits = 0
    for s in sorted(est.tolist()):
        i = bisect.bisect_left(free, s)
        best = None
        for c in (i - 1, i):
            if 0 <= c < len(free) and abs(free[c] - s) <= tol:
                if best is None or abs(free[c] - s) < abs(free[best] - s):
                    best = c
        if best is not None:
            free.pop(best)
            hits += 1
    return hits


def f1_score(truth: ActivationSet, est: ActivationSet, cfg: MatchConfig = MatchConfig()):
    """Greedy one-to-one matching in time order; returns (precision, recall, f1).

    An empty estimate has precision 1 and an empty truth has recall 1.
    """
    if cfg.require_same_neuron:
        hits = sum(
            _match_count(truth.samples[truth.neurons == r], est.samples[est.neurons == r], cfg.tol)
            for r in range(max(truth.k, est.k))
        )
    else:
        hits = _match_count(truth.samples, est.samples, cfg.tol)
    precision = hits / len(est) if len(est) else 1.0
    recall = hits / len(truth) if len(truth) else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def cp_score(truth: ActivationSet, est: ActivationSet, cfg: CPConfig = CPConfig()):
    """``1 - sum_r |K*(x_r - y_r)|_1 / sum_r (|x_r|_1 + |y_r|_1)``.

    Returns ``(score, defined)``; when both trains are empty the score is 1
    and ``defined`` is False.
    """
    x = truth.to_dense()
    y = est.to_dense()
    if cfg.binarize:
        x = (x != 0).astype(float)
        y = (y != 0).astype(float)
    denom = np.abs(x).sum() + np.abs(y).sum()
    if denom == 0:
        return 1.0, False
    kernel = np.full(cfg.kernel_width, 1.0 / cfg.kernel_width)
    diff = x - y
    num = sum(np.abs(np.convolve(diff[r], kernel)).sum() for r in range(diff.shape[0]))
    return float(1.0 - num / denom), True
