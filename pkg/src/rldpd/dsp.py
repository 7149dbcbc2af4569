"""Data-aided receiver DSP.

Training path: cyclic time synchronization, amplitude normalization, a
sample-level LMS equalizer adapted on the known reference, and a single
data-aided phase rotation. The adapted receiver can be frozen and applied to
other data, which is how the BER evaluation uses a preamble.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from numba import njit

from . import _rng
from .channel import SurrogateChannel, apply_channel
from .signal import (
    Constellation,
    cyclic_filter,
    matched_filter,
    pulse_shape,
    qam_demap,
    qam_map,
    rrc_taps,
)

SPS = 2
ROLLOFF = 0.1
RRC_SPAN = 32
PREAMBLE_SYMBOLS = 4096


@dataclass(frozen=True)
class DspConfig:
    eq_taps: int = 31
    eq_step: float = 1e-3
    eq_passes: int = 3
    sync_search: int = 64

    def __post_init__(self):
        if self.eq_taps < 1 or self.eq_taps % 2 == 0:
            raise ValueError("eq_taps must be a positive odd integer")
        # a zero step is allowed and freezes the equalizer at its center spike
        if not 0.0 <= self.eq_step <= 0.1:
            raise ValueError("eq_step must lie in [0, 0.1]")
        if self.eq_passes < 1:
            raise ValueError("eq_passes must be positive")
        if self.sync_search < 0:
            raise ValueError("sync_search must be nonnegative")


def time_sync(rx, reference, max_lag: int) -> int:
    """Cyclic lag in ``[-max_lag, max_lag]`` that best aligns ``rx`` to ``reference``.

    A positive lag means ``rx`` is ``reference`` delayed, i.e.
    ``rx == np.roll(reference, lag)``. Ties go to the smaller ``|lag|``.
    """
    rx = np.asarray(rx, dtype=complex)
    reference = np.asarray(reference, dtype=complex)
    if rx.size != reference.size:
        raise ValueError("rx and reference lengths differ")
    if not np.any(reference):
        raise ValueError("reference is all zero")
    n = rx.size
    if max_lag >= n / 2:
        raise ValueError("max_lag must be below half the signal length")
    corr = np.abs(np.fft.ifft(np.fft.fft(rx) * np.conj(np.fft.fft(reference))))
    # candidate order 0, +1, -1, +2, -2, ... so argmax's first hit wins ties
    lags = np.zeros(2 * max_lag + 1, dtype=int)
    lags[1::2] = np.arange(1, max_lag + 1)
    lags[2::2] = -np.arange(1, max_lag + 1)
    vals = corr[lags % n]
    best = np.max(vals)
    return int(lags[np.argmax(vals >= best * (1 - 1e-12))])


class PhaseEstimate(NamedTuple):
    signal: np.ndarray
    phi: float
    degenerate: bool


def phase_recover(z, reference) -> PhaseEstimate:
    """Rotate ``z`` by the data-aided common phase ``arg(sum z conj(ref))``."""
    z = np.asarray(z, dtype=complex)
    reference = np.asarray(reference, dtype=complex)
    if z.size != reference.size:
        raise ValueError("z and reference lengths differ")
    inner = np.vdot(reference, z)
    if inner == 0:
        return PhaseEstimate(z.copy(), 0.0, True)
    phi = float(np.angle(inner))
    return PhaseEstimate(z * np.exp(-1j * phi), phi, False)


@njit(cache=True)
def _lms_kernel(rx, ref, taps, step, passes, n_train):
    n = rx.size
    ntaps = taps.size
    c = (ntaps - 1) // 2
    u = np.empty(ntaps, dtype=np.complex128)
    for _ in range(passes):
        for k in range(n_train):
            y = 0j
            for j in range(ntaps):
                u[j] = rx[(k + c - j) % n]
                y += taps[j] * u[j]
            e = ref[k] - y
            for j in range(ntaps):
                taps[j] += step * e * np.conj(u[j])
    return taps


def lms_adapt(rx, reference, cfg: DspConfig, n_train: int | None = None) -> np.ndarray:
    """Adapt equalizer taps on the first ``n_train`` samples (default: all).

    Windows are taken cyclically from the whole of ``rx``, so a short
    preamble at the start of a long frame sees its true neighbors.
    """
    rx = np.ascontiguousarray(rx, dtype=np.complex128)
    reference = np.ascontiguousarray(reference, dtype=np.complex128)
    n_train = rx.size if n_train is None else n_train
    if reference.size < n_train or n_train > rx.size:
        raise ValueError("reference shorter than the training span")
    taps = np.zeros(cfg.eq_taps, dtype=np.complex128)
    taps[cfg.eq_taps // 2] = 1.0
    if cfg.eq_step == 0:
        return taps
    return _lms_kernel(rx, reference, taps, float(cfg.eq_step), int(cfg.eq_passes), int(n_train))


def lms_equalize(rx, reference, cfg: DspConfig) -> tuple[np.ndarray, np.ndarray]:
    """Data-aided LMS equalizer; returns the output of the frozen converged taps."""
    rx = np.asarray(rx, dtype=complex)
    reference = np.asarray(reference, dtype=complex)
    if rx.size != reference.size:
        raise ValueError("rx and reference lengths differ")
    taps = lms_adapt(rx, reference, cfg)
    return cyclic_filter(rx, taps), taps


@dataclass(frozen=True)
class FrozenReceiver:
    """A fully adapted receiver that can be replayed on new data."""

    lag: int = 0
    gain: float = 1.0
    taps: np.ndarray = None
    phi: float = 0.0

    def apply(self, rx) -> np.ndarray:
        z = np.roll(np.asarray(rx, dtype=complex), -self.lag) * self.gain
        if self.taps is not None:
            z = cyclic_filter(z, self.taps)
        return z * np.exp(-1j * self.phi)


def adapt_receiver(rx, reference, cfg: DspConfig, n_train: int | None = None) -> FrozenReceiver:
    """Fit sync, gain, equalizer and phase on the known span of ``reference``.

    ``reference`` has the length of ``rx``; only its first ``n_train``
    samples need to be known (the rest may be zero).
    """
    rx = np.asarray(rx, dtype=complex)
    reference = np.asarray(reference, dtype=complex)
    if rx.size != reference.size:
        raise ValueError("rx and reference lengths differ")
    n_train = rx.size if n_train is None else n_train
    known = reference.copy()
    known[n_train:] = 0
    lag = time_sync(rx, known, min(cfg.sync_search, (rx.size - 1) // 2))
    aligned = np.roll(rx, -lag)
    rx_pow = np.mean(np.abs(aligned[:n_train]) ** 2)
    ref_pow = np.mean(np.abs(known[:n_train]) ** 2)
    gain = float(np.sqrt(ref_pow / rx_pow)) if rx_pow > 0 else 1.0
    aligned = aligned * gain
    taps = lms_adapt(aligned, known, cfg, n_train)
    eq = cyclic_filter(aligned, taps)
    est = phase_recover(eq[:n_train], known[:n_train])
    return FrozenReceiver(lag=lag, gain=gain, taps=taps, phi=est.phi)


def training_dsp(rx, reference, cfg: DspConfig) -> np.ndarray:
    """Sync, equalize and derotate ``rx`` against the full known reference."""
    return adapt_receiver(rx, reference, cfg).apply(rx)


def receive(rx, reference, dsp) -> np.ndarray:
    """Run the training receiver: a config adapts afresh, a frozen receiver replays."""
    if dsp is None:
        return np.asarray(rx, dtype=complex)
    if isinstance(dsp, DspConfig):
        return training_dsp(rx, reference, dsp)
    return dsp.apply(rx)


@dataclass(frozen=True)
class BerResult:
    ber: float
    errors: int
    bits: int


def eval_ber(
    constellation: Constellation,
    transmit: Callable[[np.ndarray], np.ndarray],
    channel: SurrogateChannel,
    dsp_cfg: DspConfig,
    payload_symbols: int,
    seed: int,
    preamble_symbols: int = PREAMBLE_SYMBOLS,
    taps: np.ndarray | None = None,
) -> BerResult:
    """Bit error rate of one transmit chain over the surrogate channel.

    A frame of known preamble symbols followed by fresh payload symbols is
    pulse shaped and passed through ``transmit`` (predistortion, mapping the
    reference waveform to the DAC input) and the channel. The receiver adapts
    on the preamble only; its frozen state is applied to the whole frame,
    which is then matched filtered and sampled at even sample indices.
    """
    if payload_symbols < 1:
        raise ValueError("payload_symbols must be positive")
    if taps is None:
        taps = rrc_taps(ROLLOFF, SPS, RRC_SPAN)
    k = constellation.bits_per_symbol
    rng = _rng.substream(seed, _rng.EVAL_PAYLOAD)
    bits = rng.integers(0, 2, size=(preamble_symbols + payload_symbols) * k, dtype=np.uint8)
    symbols = qam_map(bits, constellation)
    x = pulse_shape(symbols, taps, SPS)
    rx = apply_channel(transmit(x), channel, noise_stream=_eval_noise_stream(seed))
    n_train = preamble_symbols * SPS
    receiver = adapt_receiver(rx, x, dsp_cfg, n_train)
    z = receiver.apply(rx)
    # undo the shrinkage of the MMSE-adapted receiver so the slicer grid fits
    ref = x[:n_train]
    gain = np.vdot(ref, ref).real / np.vdot(ref, z[:n_train]).real
    soft = matched_filter(z * gain, taps)[::SPS]
    payload_bits = bits[preamble_symbols * k:]
    decided = qam_demap(soft[preamble_symbols:], constellation)
    errors = int(np.count_nonzero(decided != payload_bits))
    return BerResult(ber=errors / payload_bits.size, errors=errors, bits=int(payload_bits.size))


def _eval_noise_stream(seed: int) -> int:
    # eval noise must never coincide with a training iteration's stream
    return 1_000_000_000 + int(seed)
