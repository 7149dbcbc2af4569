import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import freqz

from rldpd.channel import (
    DEFAULT_NOISE_SIGMA2,
    SurrogateChannel,
    apply_channel,
    design_dac_fir,
    expected_loss_oracle,
    iqm_transfer,
)
from rldpd.dsp import DspConfig
from rldpd.nn import DpdConfig, MlpParams, init_params
from rldpd.signal import generate_bits, pulse_shape, qam_constellation, qam_map, rrc_taps


def _rrc_signal(n_sym=2048, seed=0, order=64):
    c = qam_constellation(order)
    return pulse_shape(qam_map(generate_bits(n_sym * c.bits_per_symbol, seed), c), rrc_taps(0.1, 2, 32))


@pytest.mark.parametrize("cutoff,taps", [(0.4, 31), (0.1, 9), (0.35, 63), (0.49, 127)])
def test_dac_fir_dc_gain_and_symmetry(cutoff, taps):
    h = design_dac_fir(cutoff, taps)
    assert h.size == taps
    assert np.sum(h) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(h, h[::-1], atol=0)


def test_dac_fir_stopband_at_048():
    h = design_dac_fir(0.4, 31)
    # independent frequency response via scipy.freqz, in cycles/sample
    _, resp = freqz(h, worN=[2 * np.pi * 0.48])
    assert 20 * np.log10(abs(resp[0]) / abs(np.sum(h))) < -6.0


def test_dac_fir_linear_phase_group_delay():
    h = design_dac_fir(0.4, 31)
    w = np.linspace(0.01, 0.3, 20) * 2 * np.pi
    _, resp = freqz(h, worN=w)
    # removing a delay of (N-1)/2 samples leaves a real response
    centered = resp * np.exp(1j * w * 15)
    np.testing.assert_allclose(centered.imag, 0, atol=1e-12)


@pytest.mark.parametrize("cutoff,taps", [(0.0, 31), (0.5, 31), (0.4, 30), (0.4, 7)])
def test_dac_fir_rejects(cutoff, taps):
    with pytest.raises(ValueError):
        design_dac_fir(cutoff, taps)


def test_iqm_transfer_examples():
    assert iqm_transfer(0.0) == 0.0
    assert iqm_transfer(1.0) == pytest.approx(1.0, abs=1e-15)
    assert iqm_transfer(1 / 3) == pytest.approx(0.5, abs=1e-15)
    assert iqm_transfer(5.0) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0.1, 5))
def test_iqm_transfer_odd_and_bounded(v, vpi):
    y = iqm_transfer(v, vpi)
    assert -1 <= y <= 1
    assert iqm_transfer(-v, vpi) == pytest.approx(-y, abs=1e-15)


def test_channel_validation():
    h = design_dac_fir()
    with pytest.raises(ValueError):
        SurrogateChannel(np.ones(4) / 4)
    with pytest.raises(ValueError):
        SurrogateChannel(np.array([0.2, 0.5, 0.4]))
    with pytest.raises(ValueError):
        SurrogateChannel(h * 1.1)
    with pytest.raises(ValueError):
        SurrogateChannel(h, noise_sigma2=-1)
    with pytest.raises(ValueError):
        SurrogateChannel(h, drive_ratio=-0.1)
    assert SurrogateChannel(h).noise_sigma2 == DEFAULT_NOISE_SIGMA2


def test_zero_input_noiseless_gives_zero():
    ch = SurrogateChannel(design_dac_fir(), noise_sigma2=0.0)
    assert np.all(apply_channel(np.zeros(64, complex), ch) == 0)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        apply_channel(np.zeros(0, complex), SurrogateChannel(design_dac_fir()))


def test_small_drive_is_linear():
    ch = SurrogateChannel(np.array([1.0]), drive_ratio=0.01, noise_sigma2=0.0)
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 1000) + 1j * rng.uniform(-1, 1, 1000)
    y = apply_channel(x, ch)
    lin = np.pi * 0.01 / 2 * x
    assert np.max(np.abs(y - lin) / np.abs(lin)) < 1e-3


def test_zero_drive_noise_variance():
    ch = SurrogateChannel(design_dac_fir(), drive_ratio=0.0, noise_sigma2=0.01, seed=4)
    y = apply_channel(np.ones(100_000, complex), ch, noise_stream=2)
    assert 0.0095 <= np.var(y) <= 0.0105
    assert np.var(y.real) == pytest.approx(0.005, rel=0.03)


def test_deterministic_and_stream_dependent():
    ch = SurrogateChannel(design_dac_fir(), seed=7)
    x = _rrc_signal(256)
    np.testing.assert_array_equal(apply_channel(x, ch, 3), apply_channel(x, ch, 3))
    assert not np.array_equal(apply_channel(x, ch, 3), apply_channel(x, ch, 4))


def test_output_time_aligned_with_input():
    # a delayed output would decorrelate from the input at lag 0
    ch = SurrogateChannel(design_dac_fir(), drive_ratio=0.2, noise_sigma2=0.0)
    x = _rrc_signal(1024)
    y = apply_channel(x, ch)
    corr = [abs(np.vdot(np.roll(x, k), y)) for k in range(-5, 6)]
    assert int(np.argmax(corr)) == 5


@settings(max_examples=20, deadline=None)
@given(st.integers(-500, 500))
def test_time_invariance(shift):
    ch = SurrogateChannel(design_dac_fir(), drive_ratio=0.9, noise_sigma2=0.0)
    x = _rrc_signal(256, seed=3)
    np.testing.assert_allclose(apply_channel(np.roll(x, shift), ch), np.roll(apply_channel(x, ch), shift), atol=1e-12)


def test_output_power_monotone_in_drive():
    x = _rrc_signal(1024)
    x = x / np.max(np.abs(np.r_[x.real, x.imag]))
    h = design_dac_fir()
    powers = [
        np.mean(np.abs(apply_channel(x, SurrogateChannel(h, drive_ratio=k, noise_sigma2=0.0))) ** 2)
        for k in np.linspace(0.05, 1.0, 20)
    ]
    assert np.all(np.diff(powers) >= 0)


def _zero_params(cfg):
    p = init_params(cfg, 0)
    return MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])


def test_oracle_identity_dpd_linear_channel():
    cfg = DpdConfig(half_window=1, hidden_sizes=(4,))
    ch = SurrogateChannel(np.array([1.0]), drive_ratio=0.01, noise_sigma2=0.0)
    loss = expected_loss_oracle(_zero_params(cfg), cfg, _rrc_signal(2048), ch, DspConfig())
    assert 0 <= loss < 1e-4


def test_oracle_nonnegative_and_deterministic():
    cfg = DpdConfig(half_window=2)
    ch = SurrogateChannel(design_dac_fir(), drive_ratio=0.9, noise_sigma2=0.0)
    p = init_params(cfg, 3)
    x = _rrc_signal(1024)
    a = expected_loss_oracle(p, cfg, x, ch, DspConfig())
    assert a >= 0
    assert a == expected_loss_oracle(p, cfg, x, ch, DspConfig())


def test_oracle_rejects_noise():
    cfg = DpdConfig(half_window=1)
    with pytest.raises(ValueError):
        expected_loss_oracle(init_params(cfg, 0), cfg, _rrc_signal(64), SurrogateChannel(design_dac_fir()), None)
