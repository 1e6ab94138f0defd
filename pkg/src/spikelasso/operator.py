"""Implicit convolutional dictionary.

The dictionary ``H`` maps an activation vector ``a`` (k neurons x n samples,
flattened as ``r * n + j``) to a d x n multi-electrode signal. Column ``(r, j)``
is the waveform of neuron ``r`` placed with its first sample at ``j``; columns
with ``j > n - t`` are truncated at the right edge (zero padding). ``H`` is
never stored: a :class:`ShapeBank` together with :func:`forward`,
:func:`correlate` and :func:`gram_entry` is the operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Optional

import numpy as np

POWER_ITERATIONS = 100
POWER_TOL = 1e-7
POWER_SEED = 0
LIPSCHITZ_SAFETY = 1.02


class DimensionError(ValueError):
    """Raised when shapes, signals and activations disagree on k, d or n."""


@dataclass(frozen=True, eq=False)
class ShapeBank:
    """Known waveforms, ``waveforms[r, p, tau]`` for neuron r on electrode p."""

    waveforms: np.ndarray
    sample_rate_hz: Optional[float] = None

    def __post_init__(self):
        w = np.array(self.waveforms, dtype=np.float64, copy=True)
        if w.ndim != 3 or min(w.shape) < 1:
            raise DimensionError(f"waveforms must be a non-empty k x d x t array, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("waveforms contain non-finite values")
        dead = np.flatnonzero(~np.any(w != 0, axis=(1, 2)))
        if dead.size:
            raise ValueError(f"neuron {int(dead[0])} has an all-zero shape")
        w.setflags(write=False)
        object.__setattr__(self, "waveforms", w)

    @property
    def k(self) -> int:
        return self.waveforms.shape[0]

    @property
    def d(self) -> int:
        return self.waveforms.shape[1]

    @property
    def t(self) -> int:
        return self.waveforms.shape[2]

    @cached_property
    def lag_table(self) -> np.ndarray:
        """Untruncated Gram entries by lag.

        ``lag_table[r1, r2, delta + t - 1]`` is
        ``sum_p sum_tau W[r1, p, tau] * W[r2, p, tau + delta]`` for
        ``|delta| < t``.
        """
        return _lag_products(self.waveforms, self.waveforms)

    @cached_property
    def abs_lag_table(self) -> np.ndarray:
        aw = np.abs(self.waveforms)
        return _lag_products(aw, aw)


def _lag_products(w1, w2):
    k, _, t = w1.shape
    out = np.zeros((k, k, 2 * t - 1))
    for delta in range(-(t - 1), t):
        if delta >= 0:
            a, b = w1[:, :, : t - delta], w2[:, :, delta:]
        else:
            a, b = w1[:, :, -delta:], w2[:, :, : t + delta]
        out[:, :, delta + t - 1] = np.einsum("apt,bpt->ab", a, b)
    return out


@dataclass(eq=False)
class MultiSignal:
    """Dense d x n signal (observations, noise or residuals)."""

    samples: np.ndarray
    sample_rate_hz: Optional[float] = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2:
            raise DimensionError(f"samples must be d x n, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("signal contains non-finite values")
        self.samples = s

    @property
    def d(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def energy(self) -> float:
        return float(np.sum(self.samples**2))


@dataclass(eq=False)
class ActivationSet:
    """Sparse activations: parallel arrays of neuron, sample and amplitude.

    Entries are kept sorted by sample, then neuron. At most one entry per
    ``(neuron, sample)``; amplitudes are nonzero and finite.
    """

    neurons: np.ndarray
    samples: np.ndarray
    amplitudes: np.ndarray
    n: int
    k: int

    def __post_init__(self):
        r = np.asarray(self.neurons, dtype=np.int64).ravel()
        j = np.asarray(self.samples, dtype=np.int64).ravel()
        a = np.asarray(self.amplitudes, dtype=np.float64).ravel()
        if not (r.size == j.size == a.size):
            raise DimensionError("neurons, samples and amplitudes differ in length")
        self.n, self.k = int(self.n), int(self.k)
        if r.size:
            if r.min() < 0 or r.max() >= self.k:
                raise ValueError(f"neuron index out of range [0, {self.k})")
            if j.min() < 0 or j.max() >= self.n:
                raise ValueError(f"sample index out of range [0, {self.n})")
            if not np.all(np.isfinite(a)) or np.any(a == 0):
                raise ValueError("amplitudes must be nonzero and finite")
        order = np.lexsort((r, j))
        r, j, a = r[order], j[order], a[order]
        if r.size > 1:
            dup = (np.diff(j) == 0) & (np.diff(r) == 0)
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate activation (neuron={r[i]}, sample={j[i]})")
        self.neurons, self.samples, self.amplitudes = r, j, a

    @classmethod
    def empty(cls, n: int, k: int) -> "ActivationSet":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0), n, k)

    @classmethod
    def from_entries(cls, entries: Iterable[tuple], n: int, k: int) -> "ActivationSet":
        entries = list(entries)
        if not entries:
            return cls.empty(n, k)
        r, j, a = zip(*entries)
        return cls(np.array(r), np.array(j), np.array(a, dtype=float), n, k)

    @classmethod
    def from_dense(cls, dense: np.ndarray, floor: float = 0.0) -> "ActivationSet":
        """Sparsify a k x n array, dropping entries with ``|a| <= floor``."""
        dense = np.asarray(dense, dtype=np.float64)
        r, j = np.nonzero(np.abs(dense) > floor)
        return cls(r, j, dense[r, j], dense.shape[1], dense.shape[0])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.k, self.n))
        out[self.neurons, self.samples] = self.amplitudes
        return out

    def flat_indices(self) -> np.ndarray:
        return self.neurons * self.n + self.samples

    def __len__(self) -> int:
        return int(self.samples.size)

    def __iter__(self) -> Iterator[tuple]:
        for r, j, a in zip(self.neurons, self.samples, self.amplitudes):
            yield int(r), int(j), float(a)

    def l1_norm(self) -> float:
        return float(np.abs(self.amplitudes).sum())


def _check_pair(shapes: ShapeBank, d: int):
    if d != shapes.d:
        raise DimensionError(f"signal has {d} electrodes, shape bank has {shapes.d}")


def forward(shapes: ShapeBank, acts: ActivationSet, n: Optional[int] = None) -> MultiSignal:
    """Render ``H a``: sum of shifted, scaled waveforms.

    Cost is proportional to ``t * d * len(acts)`` plus the output allocation.
    Shapes of activations closer than ``t`` to the end are truncated.
    """
    n = acts.n if n is None else int(n)
    if acts.k != shapes.k:
        raise DimensionError(f"activations have k={acts.k}, shape bank has k={shapes.k}")
    if len(acts) and acts.samples.max() >= n:
        raise ValueError(f"activation at sample {acts.samples.max()} outside [0, {n})")
    return MultiSignal(render(shapes.waveforms, acts.neurons, acts.samples, acts.amplitudes, n))


def render(waveforms, neurons, samples, amplitudes, n):
    """Array-level forward on parallel index arrays; returns a d x n array."""
    _, d, t = waveforms.shape
    out = np.zeros((d, n))
    if len(samples) == 0:
        return out
    idx = (np.asarray(samples)[:, None] + np.arange(t)).ravel()
    contrib = np.asarray(amplitudes)[:, None, None] * waveforms[np.asarray(neurons)]
    for p in range(d):
        out[p] = np.bincount(idx, weights=contrib[:, p, :].ravel(), minlength=n + t)[:n]
    return out


def forward_dense(waveforms: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """``H a`` for a dense k x n activation array."""
    k, d, t = waveforms.shape
    n = dense.shape[1]
    out = np.zeros((d, n))
    for p in range(d):
        for r in range(k):
            out[p] += np.convolve(dense[r], waveforms[r, p])[:n]
    return out


def correlate_padded(waveforms: np.ndarray, padded: np.ndarray, start: int, stop: int) -> np.ndarray:
    """``H^T`` restricted to samples ``[start, stop)``.

    ``padded`` is a d x (n + t - 1) residual whose last ``t - 1`` columns are
    zero. Summation order per output cell is fixed (electrodes in order).
    """
    k, d, t = waveforms.shape
    seg = padded[:, start : stop + t - 1]
    out = np.zeros((k, stop - start))
    for r in range(k):
        for p in range(d):
            out[r] += np.correlate(seg[p], waveforms[r, p], "valid")
    return out


def pad_right(samples: np.ndarray, t: int) -> np.ndarray:
    d, n = samples.shape
    out = np.zeros((d, n + t - 1))
    out[:, :n] = samples
    return out


def correlate(shapes: ShapeBank, residual, window: Optional[tuple] = None) -> np.ndarray:
    """Signed correlations ``H_j^T residual`` for every neuron and window sample.

    Returns a k x (stop - start) array; ``window=None`` means the whole signal.
    """
    res = residual.samples if isinstance(residual, MultiSignal) else np.atleast_2d(residual)
    _check_pair(shapes, res.shape[0])
    n = res.shape[1]
    start, stop = (0, n) if window is None else (int(window[0]), int(window[1]))
    if stop <= start:
        raise ValueError(f"empty window [{start}, {stop})")
    if start < 0 or stop > n:
        raise ValueError(f"window [{start}, {stop}) not inside [0, {n})")
    t = shapes.t
    seg = np.zeros((res.shape[0], stop - start + t - 1))
    avail = res[:, start : stop + t - 1]
    seg[:, : avail.shape[1]] = avail
    return correlate_padded(shapes.waveforms, seg, 0, stop - start)


def gram_entry(shapes: ShapeBank, r1: int, j1: int, r2: int, j2: int, n: Optional[int] = None) -> float:
    """Inner product of columns ``(r1, j1)`` and ``(r2, j2)``.

    With ``n`` given, right-edge truncation of both columns is honoured.
    """
    k, t = shapes.k, shapes.t
    if not (0 <= r1 < k and 0 <= r2 < k) or min(j1, j2) < 0:
        raise IndexError("column index out of range")
    if n is not None and max(j1, j2) >= n:
        raise IndexError("sample index beyond signal length")
    delta = j1 - j2
    if abs(delta) >= t:
        return 0.0
    if n is None or max(j1, j2) <= n - t:
        return float(shapes.lag_table[r1, r2, delta + t - 1])
    return float(_truncated_entry(shapes.waveforms, r1, j1, r2, j2, n))


def _truncated_entry(w, r1, j1, r2, j2, n):
    t = w.shape[2]
    lo = max(j1, j2)
    hi = min(j1, j2) + t
    hi = min(hi, n)
    if hi <= lo:
        return 0.0
    s = np.arange(lo, hi)
    return np.sum(w[r1][:, s - j1] * w[r2][:, s - j2])


def gram_matrix(shapes: ShapeBank, neurons, samples, n: Optional[int] = None) -> np.ndarray:
    """Gram matrix ``H_J^T H_J`` for the columns listed in parallel arrays."""
    r = np.asarray(neurons, dtype=np.int64)
    j = np.asarray(samples, dtype=np.int64)
    t = shapes.t
    delta = j[:, None] - j[None, :]
    near = np.abs(delta) < t
    g = np.zeros(delta.shape)
    ii, ll = np.nonzero(near)
    g[ii, ll] = shapes.lag_table[r[ii], r[ll], delta[ii, ll] + t - 1]
    if n is not None and j.size and j.max() > n - t:
        # pairs involving a right-truncated column, later column first
        a, b = np.nonzero(near & (delta >= 0) & (j[:, None] > n - t))
        d_ab = delta[a, b]
        tau = np.arange(t)
        keep = (tau[None, :] < (n - j[a])[:, None]) & (tau[None, :] + d_ab[:, None] < t)
        lagged = np.minimum(tau[None, :] + d_ab[:, None], t - 1)
        wa = shapes.waveforms[r[a]]
        wb = np.take_along_axis(shapes.waveforms[r[b]], lagged[:, None, :], axis=2)
        vals = np.einsum("qpt,qpt->q", wa * keep[:, None, :], wb)
        g[a, b] = vals
        g[b, a] = vals
    return g


def render_into(out: np.ndarray, waveforms, neurons, samples, amplitudes, scale: float = 1.0):
    """Add ``scale * H a`` into a d x m buffer in place, touching only the local span."""
    _, d, t = waveforms.shape
    samples = np.asarray(samples)
    if samples.size == 0:
        return out
    lo = int(samples.min())
    hi = min(int(samples.max()) + t, out.shape[1])
    local = render(waveforms, neurons, samples - lo, amplitudes, hi - lo)
    out[:, lo:hi] += scale * local
    return out


def lambda_max(shapes: ShapeBank, y) -> float:
    """Smallest regularization for which the zero vector solves the Lasso."""
    return float(np.abs(correlate(shapes, y)).max())


def lipschitz_bound(shapes: ShapeBank, n: int) -> float:
    """Upper bound on the largest eigenvalue of ``H^T H`` for length-n signals.

    Power iteration on ``correlate(forward(.))`` with a fixed seed; the
    converged Rayleigh quotient is inflated by 2%, a non-converged one by 50%.
    The result is capped by the absolute row-sum bound of the Gram matrix,
    which is always valid.
    """
    if n < shapes.t:
        raise ValueError(f"n={n} shorter than shape length t={shapes.t}")
    w = shapes.waveforms
    rng = np.random.default_rng(POWER_SEED)
    v = rng.standard_normal((shapes.k, n))
    v /= np.linalg.norm(v)
    est = 0.0
    converged = False
    for _ in range(POWER_ITERATIONS):
        u = correlate_padded(w, pad_right(forward_dense(w, v), shapes.t), 0, n)
        new = float(np.vdot(v, u))
        norm = np.linalg.norm(u)
        if norm == 0:
            break
        v = u / norm
        if est > 0 and abs(new - est) <= POWER_TOL * abs(new):
            est = new
            converged = True
            break
        est = new
    bound = est * (LIPSCHITZ_SAFETY if converged else 1.5)
    row_sum = float(shapes.abs_lag_table.sum(axis=(1, 2)).max())
    return min(bound, row_sum)
