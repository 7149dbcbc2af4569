"""Classical predistortion: linear pre-emphasis (DPE) and arcsine with clipping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .signal import cyclic_filter

DEFAULT_DPE_LAMBDA = 1e-3
DEFAULT_DPE_TAPS = 63
DEFAULT_CLIP_GRID = tuple(round(0.70 + 0.05 * i, 2) for i in range(7))


@dataclass(frozen=True)
class DpeFilter:
    taps: np.ndarray
    regularization: float = 0.0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise ValueError("DPE filter needs an odd tap count")
        if not np.all(np.isfinite(taps)):
            raise ValueError("DPE taps must be finite")
        object.__setattr__(self, "taps", taps)


@dataclass(frozen=True)
class ClipArcsine:
    clip_level: float = 1.0
    vpi: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.clip_level <= 1.0:
            raise ValueError("clip_level must lie in (0, 1]")
        if self.vpi <= 0:
            raise ValueError("vpi must be positive")


def _centered_spectrum(taps: np.ndarray, n: int) -> np.ndarray:
    """DFT on an n-point grid of a filter whose center tap sits at time zero."""
    c = (taps.size - 1) // 2
    h = np.zeros(n)
    np.add.at(h, (np.arange(taps.size) - c) % n, taps)
    return np.fft.fft(h)


def design_dpe(
    dac_fir,
    lam: float = DEFAULT_DPE_LAMBDA,
    num_taps: int = DEFAULT_DPE_TAPS,
    renormalize: bool = True,
) -> DpeFilter:
    """Regularized frequency-domain inverse ``H* / (|H|^2 + lam)`` of the DAC.

    With ``renormalize`` the taps are scaled so that the DPE/DAC cascade has
    exactly unit DC gain.
    """
    dac_fir = np.asarray(dac_fir, dtype=float)
    if num_taps % 2 == 0:
        raise ValueError("num_taps must be odd")
    if num_taps < dac_fir.size:
        raise ValueError("num_taps must be at least the DAC filter length")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    H = _centered_spectrum(dac_fir, num_taps)
    inv = np.conj(H) / (np.abs(H) ** 2 + lam)
    h = np.fft.ifft(inv).real
    taps = np.fft.fftshift(h)  # time zero moves to the middle tap
    if renormalize:
        taps = taps / (taps.sum() * dac_fir.sum())
    return DpeFilter(taps=taps, regularization=lam)


def apply_dpe(signal, f: DpeFilter) -> np.ndarray:
    signal = np.asarray(signal, dtype=complex)
    if signal.size == 0:
        raise ValueError("empty signal")
    return cyclic_filter(signal, f.taps)


def quadrature_peak(signal) -> float:
    signal = np.asarray(signal, dtype=complex)
    return float(max(np.max(np.abs(signal.real), initial=0.0), np.max(np.abs(signal.imag), initial=0.0)))


def arcsine_predistort(signal, p: ClipArcsine, peak: float | None = None) -> np.ndarray:
    """Invert the modulator sine per quadrature after peak normalization and clipping.

    Both quadratures share one full-scale ``peak`` (the largest quadrature
    magnitude unless given). The output is ``(2 vpi / pi) arcsin(clip(u / peak))``
    so that ``iqm_transfer`` of it returns the normalized, clipped input.
    """
    signal = np.asarray(signal, dtype=complex)
    if peak is None:
        peak = quadrature_peak(signal)
    scale = 1.0 / max(1e-12, peak)
    c = p.clip_level

    def one(u):
        w = np.clip(u * scale, -c, c)
        return (2 * p.vpi / np.pi) * np.arcsin(w)

    return one(signal.real) + 1j * one(signal.imag)


def optimize_clip(candidates: Iterable[float], evaluate: Callable[[float], float], vpi: float = 1.0) -> ClipArcsine:
    """Grid search for the clip level with the lowest BER; ties go to the larger level."""
    levels = sorted({float(c) for c in candidates}, reverse=True)
    if not levels:
        raise ValueError("no clip candidates given")
    if any(not 0.0 < c <= 1.0 for c in levels):
        raise ValueError("clip candidates must lie in (0, 1]")
    bers = [evaluate(c) for c in levels]
    best = levels[int(np.argmin(bers))]
    return ClipArcsine(clip_level=best, vpi=vpi)
