"""Surrogate optical back-to-back transmitter/receiver.

The plant is a Wiener cascade: drive scaling, the DAC low-pass response, the
per-quadrature sine transfer of the IQ modulator, then additive circular
Gaussian receiver noise. The drive ratio ``kappa`` stands in for the DAC
peak-to-peak output voltage relative to the modulator half-wave voltage.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import firwin

from . import _rng
from .signal import cyclic_filter

DEFAULT_CUTOFF = 0.4  # 24 GHz DAC bandwidth at 60 GS/s
DEFAULT_DAC_TAPS = 31
DEFAULT_NOISE_SIGMA2 = 0.003


def design_dac_fir(cutoff_norm: float = DEFAULT_CUTOFF, num_taps: int = DEFAULT_DAC_TAPS) -> np.ndarray:
    """Hamming-windowed sinc low-pass, cutoff in cycles/sample, unit DC gain."""
    if not 0.0 < cutoff_norm < 0.5:
        raise ValueError("cutoff_norm must lie in (0, 0.5)")
    if num_taps < 9 or num_taps % 2 == 0:
        raise ValueError("num_taps must be odd and >= 9")
    taps = firwin(num_taps, cutoff_norm, window="hamming", fs=1.0)
    return taps / taps.sum()


@dataclass(frozen=True)
class SurrogateChannel:
    dac_fir: np.ndarray = field(default_factory=design_dac_fir, repr=False)
    drive_ratio: float = 0.9
    vpi: float = 1.0
    noise_sigma2: float = DEFAULT_NOISE_SIGMA2
    seed: int = 0

    def __post_init__(self):
        fir = np.asarray(self.dac_fir, dtype=float)
        if fir.ndim != 1 or fir.size % 2 == 0:
            raise ValueError("dac_fir must have odd length")
        if not np.allclose(fir, fir[::-1], rtol=0, atol=1e-12):
            raise ValueError("dac_fir must be symmetric (linear phase)")
        if abs(fir.sum() - 1.0) > 1e-9:
            raise ValueError("dac_fir must have unit DC gain")
        # kappa = 0 is allowed: it switches the transmitter off (noise-only checks)
        if self.drive_ratio < 0:
            raise ValueError("drive_ratio must be nonnegative")
        if self.vpi <= 0:
            raise ValueError("vpi must be positive")
        if self.noise_sigma2 < 0:
            raise ValueError("noise_sigma2 must be nonnegative")
        object.__setattr__(self, "dac_fir", fir)

    def with_drive(self, drive_ratio: float) -> "SurrogateChannel":
        return replace(self, drive_ratio=drive_ratio)

    def noiseless(self) -> "SurrogateChannel":
        return replace(self, noise_sigma2=0.0)


def iqm_transfer(v, vpi: float = 1.0):
    """Per-quadrature modulator field transfer ``sin(pi v / (2 vpi))``, v limited to +-vpi."""
    v = np.clip(v, -vpi, vpi)
    return np.sin(np.pi * v / (2 * vpi))


def apply_channel(tx, ch: SurrogateChannel, noise_stream: int = 0) -> np.ndarray:
    """Send a digital waveform through the surrogate plant.

    The DAC filter is applied as a centered cyclic convolution, which is the
    causal filter followed by compensation of its known group delay; the
    output is therefore time-aligned with ``tx``.
    """
    tx = np.asarray(tx, dtype=complex)
    if tx.size == 0:
        raise ValueError("empty input signal")
    drive = ch.drive_ratio * tx
    # real taps filter I and Q independently
    shaped = cyclic_filter(drive, ch.dac_fir)
    rx = iqm_transfer(shaped.real, ch.vpi) + 1j * iqm_transfer(shaped.imag, ch.vpi)
    if ch.noise_sigma2 > 0:
        rng = _rng.substream(ch.seed, _rng.CHANNEL_NOISE, noise_stream)
        std = np.sqrt(ch.noise_sigma2 / 2)
        rx = rx + std * (rng.standard_normal(tx.size) + 1j * rng.standard_normal(tx.size))
    return rx


def expected_loss_oracle(params, cfg, x, ch: SurrogateChannel, dsp, dpe=None) -> float:
    """Deterministic mean squared error through DPD -> DPE -> channel -> DSP.

    No perturbation and no channel noise are applied; ``x`` is the
    pulse-shaped reference. ``dsp`` is a :class:`~rldpd.dsp.DspConfig` or a
    frozen receiver (anything with ``apply``), as accepted by the trainer.
    """
    from .baselines import apply_dpe
    from .dsp import receive
    from .nn import dpd_apply

    if ch.noise_sigma2 != 0:
        raise ValueError("expected_loss_oracle requires a noiseless channel")
    x = np.asarray(x, dtype=complex)
    mu = dpd_apply(params, cfg, x)
    tx = apply_dpe(mu, dpe) if dpe is not None else mu
    rx = apply_channel(tx, ch)
    z = receive(rx, x, dsp)
    return float(np.mean(np.abs(z - x) ** 2))
