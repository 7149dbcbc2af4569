"""Complex-baseband signal primitives.

Bit sources, square Gray-coded QAM, root-raised-cosine pulse shaping and the
cyclic filtering helper used throughout the simulator.

Gray labeling convention
------------------------
A symbol label of ``k = log2(M)`` bits is split in half: the first ``k/2``
bits (MSB first) label the in-phase level, the remaining ``k/2`` bits label
the quadrature level. Along each axis, level position ``p`` (``p = 0`` is the
most positive level) carries the reflected Gray label ``p ^ (p >> 1)``. With
this convention QPSK label ``00`` is the point ``(1 + 1j) / sqrt(2)``.

All filtering is cyclic, so every shaped or filtered signal has the same
length as its input and no edge transients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class ComplexSignal:
    """Complex baseband samples at a fixed oversampling rate."""

    samples: np.ndarray
    samples_per_symbol: int = 2

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        if self.samples_per_symbol < 1:
            raise ValueError("samples_per_symbol must be positive")
        if samples.ndim != 1 or samples.size % self.samples_per_symbol:
            raise ValueError(
                "samples length must be a multiple of samples_per_symbol"
            )
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    def __array__(self, dtype=None, copy=None):
        return self.samples if dtype is None else self.samples.astype(dtype)


@dataclass(frozen=True)
class Constellation:
    """Square Gray-coded QAM constellation with unit average power."""

    order: int
    points: np.ndarray = field(repr=False)
    levels: np.ndarray = field(repr=False)

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def axis_order(self) -> int:
        return self.levels.size


def _gray_decode(labels: np.ndarray) -> np.ndarray:
    """Position along the axis for each reflected-Gray label."""
    pos = labels.copy()
    shift = labels >> 1
    while np.any(shift):
        pos ^= shift
        shift >>= 1
    return pos


@lru_cache(maxsize=None)
def qam_constellation(order: int) -> Constellation:
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; use one of {SUPPORTED_ORDERS}")
    m = int(round(np.sqrt(order)))
    half = int(np.log2(m))
    # levels[label] for one axis, before power normalization
    labels = np.arange(m)
    positions = _gray_decode(labels)
    levels = (m - 1) - 2.0 * positions
    # E|s|^2 = 2 * mean(level^2) for the product grid
    scale = np.sqrt(2.0 * np.mean(levels**2))
    levels = levels / scale
    full = np.arange(order)
    points = levels[full >> half] + 1j * levels[full & (m - 1)]
    points.setflags(write=False)
    levels.setflags(write=False)
    return Constellation(order=order, points=points, levels=levels)


def generate_bits(count: int, seed: int) -> np.ndarray:
    """Return ``count`` i.i.d. fair bits, deterministic in ``seed``."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=count, dtype=np.uint8)


def _bits_to_labels(bits: np.ndarray, k: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % k:
        raise ValueError(
            f"bit count {bits.size} is not a multiple of bits_per_symbol={k}"
        )
    weights = 1 << np.arange(k - 1, -1, -1)
    return bits.reshape(-1, k) @ weights


def qam_map(bits: np.ndarray, constellation: Constellation) -> np.ndarray:
    labels = _bits_to_labels(bits, constellation.bits_per_symbol)
    return constellation.points[labels]


def _slice_axis(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # distance to every level, columns ordered by label so the first
    # minimum found is the smallest label on ties
    dist = np.abs(values[:, None] - levels[None, :])
    dmin = dist.min(axis=1, keepdims=True)
    tol = 1e-12 * (1.0 + dmin)
    return np.argmax(dist <= dmin + tol, axis=1)


def qam_demap_labels(symbols: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Hard-decision labels (nearest point, ties toward the smaller label).

    For a product grid the nearest point is found per axis, and because the
    in-phase label occupies the high bits the per-axis tie-break yields the
    smallest full label.
    """
    symbols = np.asarray(symbols, dtype=complex).ravel()
    half = constellation.bits_per_symbol // 2
    i_lab = _slice_axis(symbols.real, constellation.levels)
    q_lab = _slice_axis(symbols.imag, constellation.levels)
    return (i_lab << half) | q_lab


def qam_demap(symbols: np.ndarray, constellation: Constellation) -> np.ndarray:
    labels = qam_demap_labels(symbols, constellation)
    k = constellation.bits_per_symbol
    shifts = np.arange(k - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def rrc_taps(rolloff: float, sps: int, span_symbols: int) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span_symbols * sps + 1`` long."""
    if not 0.0 < rolloff <= 1.0:
        raise ValueError("rolloff must lie in (0, 1]")
    if span_symbols < 8 or span_symbols % 2:
        raise ValueError("span_symbols must be an even integer >= 8")
    if sps < 1:
        raise ValueError("sps must be positive")
    beta = rolloff
    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps
    h = np.empty(n)
    at_zero = np.isclose(t, 0.0, atol=1e-12)
    at_sing = np.isclose(np.abs(t), 1.0 / (4 * beta), atol=1e-12)
    regular = ~(at_zero | at_sing)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    h[regular] = num / den
    h[at_zero] = 1 - beta + 4 * beta / np.pi
    h[at_sing] = (beta / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    return h / np.sqrt(np.sum(h**2))


def cyclic_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Centered cyclic convolution; output has the length of ``x``.

    ``y[n] = sum_j taps[j] * x[(n - j + c) mod N]`` with ``c = (len(taps) - 1) // 2``,
    so a symmetric filter introduces no delay. Real inputs stay real.
    """
    x = np.asarray(x)
    taps = np.asarray(taps)
    n = x.size
    if n == 0:
        raise ValueError("cannot filter an empty signal")
    c = (taps.size - 1) // 2
    h = np.zeros(n, dtype=np.result_type(taps.dtype, float))
    np.add.at(h, (np.arange(taps.size) - c) % n, taps)
    y = np.fft.ifft(np.fft.fft(x) * np.fft.fft(h))
    if not np.iscomplexobj(x) and not np.iscomplexobj(taps):
        return y.real
    return y


def upsample(symbols: np.ndarray, sps: int) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=complex)
    out = np.zeros(symbols.size * sps, dtype=complex)
    out[::sps] = symbols
    return out


def pulse_shape(symbols: np.ndarray, taps: np.ndarray, sps: int = 2) -> np.ndarray:
    """Zero-insertion upsampling followed by cyclic filtering."""
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.size == 0:
        raise ValueError("empty symbol sequence")
    return cyclic_filter(upsample(symbols, sps), taps)


def matched_filter(signal: np.ndarray, taps: np.ndarray) -> np.ndarray:
    signal = np.asarray(signal, dtype=complex)
    if signal.size == 0:
        raise ValueError("empty signal")
    return cyclic_filter(signal, np.asarray(taps)[::-1])
