"""Overlap (activation chain) statistics and their theoretical mean-size bound."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .operator import ActivationSet


def overlap_bound(mu_total: float, t: int) -> float:
    """Upper bound ``mu t exp(mu t)`` on the mean overlap size for pooled Poisson firing."""
    if mu_total <= 0 or t < 1:
        raise ValueError("need mu_total > 0 and t >= 1")
    x = mu_total * t
    return x * math.exp(x)


@dataclass
class OverlapStats:
    group_count: int
    mean_size: float
    max_size: int
    size_histogram: dict = field(default_factory=dict)
    per_neuron: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "group_count": self.group_count,
            "mean_size": self.mean_size,
            "max_size": self.max_size,
            "size_histogram": {str(s): c for s, c in sorted(self.size_histogram.items())},
            "per_neuron": self.per_neuron,
        }


def chain_sizes(samples: np.ndarray, t: int) -> np.ndarray:
    """Sizes of maximal chains of sorted samples with consecutive gaps ``<= t``."""
    samples = np.asarray(samples)
    if samples.size == 0:
        return np.zeros(0, dtype=np.int64)
    breaks = np.flatnonzero(np.diff(samples) > t)
    edges = np.concatenate(([0], breaks + 1, [samples.size]))
    return np.diff(edges)


def chain_labels(samples: np.ndarray, t: int) -> np.ndarray:
    """Group label for each sorted sample (same chain rule as :func:`chain_sizes`)."""
    samples = np.asarray(samples)
    if samples.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(([0], np.cumsum(np.diff(samples) > t)))


def _stats(sizes):
    if sizes.size == 0:
        return 0, 0.0, 0, {}
    hist = Counter(int(s) for s in sizes)
    return int(sizes.size), float(sizes.mean()), int(sizes.max()), dict(hist)


def empirical_overlaps(acts: ActivationSet, t: int) -> OverlapStats:
    """Pool all neurons and measure the chains of activations at most t apart."""
    count, mean, mx, hist = _stats(chain_sizes(acts.samples, t))
    per_neuron = {}
    for r in range(acts.k):
        c, m, x, _ = _stats(chain_sizes(acts.samples[acts.neurons == r], t))
        per_neuron[str(r)] = {"group_count": c, "mean_size": m, "max_size": x}
    return OverlapStats(count, mean, mx, hist, per_neuron)
