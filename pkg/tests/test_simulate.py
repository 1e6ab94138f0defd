import numpy as np
import pytest

from spikelasso import MultiSignal, forward
from spikelasso.simulate import (
    NeuronShape,
    NoiseSpec,
    PoissonSpec,
    ShapeParams,
    add_noise,
    noise_sigma,
    poisson_activations,
    simulate,
    synth_shapes,
)


def test_zero_intensity_is_empty():
    assert len(poisson_activations(PoissonSpec([0.0, 0.0], 1000, seed=1))) == 0


def test_poisson_counts_concentrate():
    for seed in range(20):
        acts = poisson_activations(PoissonSpec([1e-3], 1_000_000, seed=seed))
        assert abs(len(acts) - 1000) <= 4 * np.sqrt(1000)


def test_neurons_get_independent_streams():
    acts = poisson_activations(PoissonSpec([0.01, 0.01], 10_000, seed=3))
    a = acts.samples[acts.neurons == 0]
    b = acts.samples[acts.neurons == 1]
    assert len(a) and len(b) and not np.array_equal(a, b)


def test_spikes_fit_inside_signal():
    acts = poisson_activations(PoissonSpec([0.2], 500, seed=0, t=30))
    assert acts.samples.max() <= 470


def test_amplitude_range_and_jitter_switch():
    acts = poisson_activations(PoissonSpec([0.05] * 3, 5000, seed=2))
    assert acts.amplitudes.min() >= 0.8 and acts.amplitudes.max() <= 1.2
    flat = poisson_activations(PoissonSpec([0.05] * 3, 5000, seed=2, jitter=False))
    assert np.all(flat.amplitudes == 1.0)
    np.testing.assert_array_equal(flat.samples, acts.samples)


def test_poisson_spec_validation():
    with pytest.raises(ValueError):
        PoissonSpec([1.0], 10)
    with pytest.raises(ValueError):
        PoissonSpec([-0.1], 10)
    assert PoissonSpec.from_rate(4, 10.0, 30_000.0, 100).mu_total == pytest.approx(4 / 3000)


def test_biphasic_zero_mean():
    # second lobe with equal mass: ratio * width_2 = width_1
    nr = NeuronShape(amplitude=1.0, depol_width=3.0, hyper_width=6.0, hyper_ratio=0.5, attenuation=(1.0,))
    w = synth_shapes(ShapeParams(120, [nr])).waveforms[0, 0]
    assert abs(w.sum()) < 1e-6 * np.abs(w).sum()
    assert w.max() > 0 and w.min() < 0 and np.argmax(w) < np.argmin(w)


@pytest.mark.parametrize("seed", range(5))
def test_normalization(seed):
    sb = synth_shapes(ShapeParams.random(4, 5, 30, seed))
    peak = np.linalg.norm(sb.waveforms, axis=2).max(axis=1)
    np.testing.assert_allclose(peak, 1.0, atol=1e-12)


def test_distinct_widths_are_distinguishable():
    a = NeuronShape(depol_width=1.5, hyper_width=4.0, attenuation=(1.0, 0.5))
    b = NeuronShape(depol_width=3.0, hyper_width=7.0, attenuation=(1.0, 0.5))
    w = synth_shapes(ShapeParams(40, [a, b])).waveforms
    x, y = w[0].ravel(), w[1].ravel()
    peak = 0.0
    for lag in range(-39, 40):
        xs = np.roll(np.pad(x.reshape(2, 40), ((0, 0), (40, 40))), lag, axis=1).ravel()
        ys = np.pad(y.reshape(2, 40), ((0, 0), (40, 40))).ravel()
        peak = max(peak, abs(xs @ ys))
    assert peak / (np.linalg.norm(x) * np.linalg.norm(y)) < 1.0 - 1e-3


def test_degenerate_shape_rejected():
    with pytest.raises(ValueError):
        synth_shapes(ShapeParams(10, [NeuronShape(amplitude=0.0)]))


def test_noise_none_is_identity():
    s = MultiSignal(np.arange(12.0).reshape(2, 6))
    out = add_noise(s, 1.0, NoiseSpec(None, 0))
    np.testing.assert_array_equal(out.samples, s.samples)


def test_realized_snr():
    ds = simulate(3, 4, 30, 30_000, 20.0, 10_000.0, seed=5)
    noisy = add_noise(ds.clean, ds.clean.energy(), NoiseSpec(0.0, 9))
    noise = noisy.samples - ds.clean.samples
    snr = 10 * np.log10(ds.clean.energy() / np.sum(noise**2))
    assert abs(snr) <= 0.2


def test_sigma_scale_equivariance():
    e = 37.0
    assert noise_sigma(4 * e, 3, 100, 5.0) == pytest.approx(2 * noise_sigma(e, 3, 100, 5.0))
    with pytest.raises(ValueError):
        noise_sigma(0.0, 3, 100, 5.0)


def test_reproducible_and_exact_render():
    a = simulate(3, 2, 20, 5000, 30.0, 10_000.0, snr_db=5.0, seed=11)
    b = simulate(3, 2, 20, 5000, 30.0, 10_000.0, snr_db=5.0, seed=11)
    np.testing.assert_array_equal(a.observed.samples, b.observed.samples)
    np.testing.assert_array_equal(a.shapes.waveforms, b.shapes.waveforms)
    c = simulate(3, 2, 20, 5000, 30.0, 10_000.0, seed=11)
    assert not np.any(c.observed.samples - forward(c.shapes, c.truth, 5000).samples)
