"""Synthetic ground truth: Poisson spike trains, biphasic shapes, noise."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .operator import ActivationSet, MultiSignal, ShapeBank, forward

AMPLITUDE_RANGE = (0.8, 1.2)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator: the same (seed, key) always gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


# stream tags, keep stable: they are part of the reproducibility contract
TAG_SPIKES = 1
TAG_SHAPES = 2
TAG_NOISE = 3


@dataclass
class PoissonSpec:
    """Per-neuron firing intensities in events per sample."""

    mu: Sequence[float]
    n: int
    seed: int = 0
    t: int = 1
    jitter: bool = True

    def __post_init__(self):
        self.mu = [float(m) for m in self.mu]
        if any(not (0 <= m < 1) for m in self.mu):
            raise ValueError("intensities must lie in [0, 1) events per sample")
        if self.n < 1 or self.t < 1:
            raise ValueError("n and t must be >= 1")

    @property
    def mu_total(self) -> float:
        return sum(self.mu)

    @classmethod
    def from_rate(cls, k, rate_hz, sample_rate_hz, n, seed=0, t=1, jitter=True):
        return cls([rate_hz / sample_rate_hz] * k, n, seed, t, jitter)


def poisson_activations(spec: PoissonSpec) -> ActivationSet:
    """Discretized Poisson trains: each sample in ``[0, n - t]`` fires with prob mu_r."""
    k = len(spec.mu)
    last = spec.n - spec.t
    rs, js, amps = [], [], []
    for r, mu in enumerate(spec.mu):
        if mu == 0 or last < 0:
            continue
        rng = stream(spec.seed, TAG_SPIKES, r)
        j = np.flatnonzero(rng.random(last + 1) < mu)
        if spec.jitter:
            a = rng.uniform(*AMPLITUDE_RANGE, size=j.size)
        else:
            a = np.ones(j.size)
        rs.append(np.full(j.size, r))
        js.append(j)
        amps.append(a)
    if not rs:
        return ActivationSet.empty(spec.n, k)
    return ActivationSet(np.concatenate(rs), np.concatenate(js), np.concatenate(amps), spec.n, k)


@dataclass
class NeuronShape:
    amplitude: float = 1.0
    depol_width: float = 2.0
    hyper_width: float = 5.0
    hyper_ratio: float = 0.4
    attenuation: Sequence[float] = (1.0,)


@dataclass
class ShapeParams:
    """Biphasic waveform parameters, one :class:`NeuronShape` per neuron.

    Widths are Gaussian standard deviations in samples. The depolarization
    lobe peaks at ``t/4``; the hyperpolarization lobe follows it.
    """

    t: int
    neurons: list = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def k(self):
        return len(self.neurons)

    @property
    def d(self):
        return len(self.neurons[0].attenuation)

    @classmethod
    def random(cls, k: int, d: int, t: int, seed: int = 0) -> "ShapeParams":
        """Draw distinct widths/ratios per neuron and a localized spatial profile.

        Each neuron gets its own slot along the electrode array (in random
        order), so footprints of different neurons overlap only partly.
        """
        rng = stream(seed, TAG_SHAPES)
        pos = np.arange(d)
        slots = rng.permutation(k)
        neurons = []
        for r in range(k):
            centre = (slots[r] + rng.uniform()) * d / k - 0.5
            spread = rng.uniform(0.5, 1.0)
            atten = np.exp(-0.5 * ((pos - centre) / spread) ** 2)
            neurons.append(
                NeuronShape(
                    amplitude=rng.uniform(0.8, 1.2),
                    depol_width=rng.uniform(0.04, 0.09) * t,
                    hyper_width=rng.uniform(0.10, 0.22) * t,
                    hyper_ratio=rng.uniform(0.25, 0.6),
                    attenuation=tuple(atten),
                )
            )
        return cls(t, neurons, seed)


def _gauss(x, centre, width):
    return np.exp(-0.5 * ((x - centre) / width) ** 2)


def synth_shapes(params: ShapeParams, sample_rate_hz: Optional[float] = None) -> ShapeBank:
    """Difference of a positive and a negative Gaussian lobe, attenuated per electrode.

    Each neuron is scaled so its strongest electrode has unit l2 norm.
    """
    t, k, d = params.t, params.k, params.d
    x = np.arange(t, dtype=float)
    w = np.zeros((k, d, t))
    for r, nr in enumerate(params.neurons):
        if len(nr.attenuation) != d:
            raise ValueError("all neurons need the same number of electrodes")
        c1 = 0.25 * t
        c2 = c1 + 1.5 * nr.depol_width + 1.5 * nr.hyper_width
        base = nr.amplitude * (_gauss(x, c1, nr.depol_width) - nr.hyper_ratio * _gauss(x, c2, nr.hyper_width))
        w[r] = np.asarray(nr.attenuation, dtype=float)[:, None] * base[None, :]
        top = np.linalg.norm(w[r], axis=1).max()
        if not np.isfinite(top) or top == 0:
            raise ValueError(f"neuron {r} parameters give an all-zero shape")
        w[r] /= top
    return ShapeBank(w, sample_rate_hz)


@dataclass
class NoiseSpec:
    snr_db: Optional[float] = None
    seed: int = 0


def noise_sigma(truth_energy: float, d: int, n: int, snr_db: float) -> float:
    if not truth_energy > 0:
        raise ValueError("SNR is undefined for a zero-energy clean signal")
    return float(np.sqrt(truth_energy / (d * n * 10.0 ** (snr_db / 10.0))))


def add_noise(signal: MultiSignal, truth_energy: float, spec: NoiseSpec) -> MultiSignal:
    """Add white Gaussian noise so that ``10 log10(E / (d n sigma^2)) = snr_db``."""
    if spec.snr_db is None:
        return MultiSignal(signal.samples.copy(), signal.sample_rate_hz)
    sigma = noise_sigma(truth_energy, signal.d, signal.n, spec.snr_db)
    z = stream(spec.seed, TAG_NOISE).standard_normal(signal.samples.shape)
    return MultiSignal(signal.samples + sigma * z, signal.sample_rate_hz)


@dataclass
class Dataset:
    shapes: ShapeBank
    truth: ActivationSet
    clean: MultiSignal
    observed: MultiSignal


def simulate(k: int, d: int, t: int, n: int, rate_hz: float, sample_rate_hz: float,
             snr_db: Optional[float] = None, seed: int = 0, jitter: bool = True,
             shape_seed: Optional[int] = None) -> Dataset:
    """Shapes, ground-truth trains and the (optionally noisy) rendered signal."""
    shapes = synth_shapes(ShapeParams.random(k, d, t, seed if shape_seed is None else shape_seed),
                          sample_rate_hz)
    truth = poisson_activations(PoissonSpec.from_rate(k, rate_hz, sample_rate_hz, n, seed, t, jitter))
    clean = forward(shapes, truth, n)
    clean.sample_rate_hz = sample_rate_hz
    if snr_db is not None and clean.energy() == 0:
        observed = MultiSignal(clean.samples.copy(), sample_rate_hz)
    else:
        observed = add_noise(clean, clean.energy(), NoiseSpec(snr_db, seed))
    return Dataset(shapes, truth, clean, observed)
