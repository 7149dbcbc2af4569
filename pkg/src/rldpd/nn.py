"""Tap-delay-line MLP predistorter with a shortcut from the center input.

The network sees a cyclic window of ``2L + 1`` samples around the current
sample, runs it through ReLU hidden layers and a linear output layer, and
adds the current sample to the result. Gradients are computed by explicit
backpropagation; no autodiff framework is involved.

In ``per-quadrature`` mode one real network with ``2L + 1`` inputs and one
output processes the I and Q windows independently. In ``joint-iq`` mode the
I and Q windows are concatenated into ``2(2L + 1)`` inputs and the network
emits both quadratures.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PER_QUADRATURE = "per-quadrature"
JOINT_IQ = "joint-iq"
MODES = (PER_QUADRATURE, JOINT_IQ)
INIT_SCALE = 0.05
PARAMS_MAGIC = "RLDPD-PARAMS"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class DpdConfig:
    half_window: int = 2
    hidden_sizes: tuple[int, ...] = (16, 16, 16)
    mode: str = PER_QUADRATURE

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.half_window < 0:
            raise ValueError("half_window must be nonnegative")
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be a nonempty list of positive sizes")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def window_len(self) -> int:
        return 2 * self.half_window + 1

    @property
    def n_inputs(self) -> int:
        return self.window_len * (2 if self.mode == JOINT_IQ else 1)

    @property
    def n_outputs(self) -> int:
        return 2 if self.mode == JOINT_IQ else 1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.n_inputs, *self.hidden_sizes, self.n_outputs]


@dataclass
class MlpParams:
    """Weights (fan_out x fan_in) and biases per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias does not match weight rows")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: fan_in does not chain with previous layer")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        vec = np.asarray(vec, dtype=float)
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        if pos != vec.size:
            raise ValueError("flat vector length does not match parameter count")
        return MlpParams(weights, biases)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def checksum(self) -> int:
        return zlib.crc32(np.ascontiguousarray(self.flat()).tobytes()) & 0xFFFFFFFF

    def check_finite(self):
        if not np.all(np.isfinite(self.flat())):
            raise FloatingPointError("non-finite DPD parameters")


def init_params(cfg: DpdConfig, seed: int) -> MlpParams:
    """He-normal weights, output layer scaled by 0.05, zero biases.

    The small output scale keeps the network output near zero so the shortcut
    makes the initial predistorter close to the identity. Hidden layers keep
    the full He variance; shrinking them as well leaves the hidden activations
    too small for the output layer to receive a usable gradient.
    """
    rng = np.random.default_rng(seed)
    sizes = cfg.layer_sizes
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = np.sqrt(2.0 / fan_in) * (INIT_SCALE if i == n_layers - 1 else 1.0)
        weights.append(std * rng.standard_normal((fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass(frozen=True)
class WindowBatch:
    """Cyclic windows ``[x[k-L], ..., x[k], ..., x[k+L]]`` for every sample k.

    ``windows`` has shape ``(2, N, 2L+1)`` (I then Q) in per-quadrature mode and
    ``(N, 2(2L+1))`` (I window then Q window) in joint mode.
    """

    windows: np.ndarray
    half_window: int
    mode: str
    centers: np.ndarray = field(repr=False)

    @property
    def center_index(self) -> int:
        return self.half_window

    def __len__(self):
        return self.centers.size


def make_windows(signal, half_window: int, mode: str = PER_QUADRATURE) -> WindowBatch:
    x = np.asarray(signal, dtype=complex)
    width = 2 * half_window + 1
    if x.size <= width:
        raise ValueError(f"signal of length {x.size} is too short for a window of {width}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    idx = (np.arange(x.size)[:, None] + np.arange(-half_window, half_window + 1)[None, :]) % x.size
    win = x[idx]
    if mode == PER_QUADRATURE:
        windows = np.stack([win.real, win.imag])
    else:
        windows = np.concatenate([win.real, win.imag], axis=1)
    return WindowBatch(windows=windows, half_window=half_window, mode=mode, centers=x.copy())


@dataclass(frozen=True)
class ForwardCache:
    params: MlpParams
    mode: str
    n_windows: int
    activations: list  # inputs to each layer, first entry is the network input
    preacts: list  # hidden-layer pre-activations


def _stacked_input(batch: WindowBatch) -> np.ndarray:
    if batch.mode == PER_QUADRATURE:
        return batch.windows.reshape(-1, batch.windows.shape[-1])
    return batch.windows


def dpd_forward(params: MlpParams, batch: WindowBatch) -> tuple[np.ndarray, ForwardCache]:
    """Predistorted complex output for every window plus the backprop cache."""
    a = _stacked_input(batch)
    if a.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"window width {a.shape[1]} does not match network input size {params.layer_sizes[0]}"
        )
    n_out = params.layer_sizes[-1]
    expected_out = 1 if batch.mode == PER_QUADRATURE else 2
    if n_out != expected_out:
        raise ValueError(f"network has {n_out} outputs, {batch.mode} mode needs {expected_out}")
    activations, preacts = [a], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if i < last:
            preacts.append(z)
            a = np.maximum(z, 0.0)
            activations.append(a)
        else:
            a = z
    n = len(batch)
    if batch.mode == PER_QUADRATURE:
        out = a[:, 0]
        mu = out[:n] + 1j * out[n:]
    else:
        mu = a[:, 0] + 1j * a[:, 1]
    mu = mu + batch.centers
    cache = ForwardCache(params=params, mode=batch.mode, n_windows=n, activations=activations, preacts=preacts)
    return mu, cache


def dpd_backward(params: MlpParams, cache: ForwardCache, w_i, w_q) -> MlpParams:
    """Contract the output Jacobian with per-window cotangents.

    Returns ``sum_k w_i[k] * d Re(mu_k)/d theta + w_q[k] * d Im(mu_k)/d theta``
    in the shape of ``params``. The shortcut carries no parameters, and the
    ReLU derivative at exactly zero is taken as zero.
    """
    if cache.params is not params:
        raise ValueError("cache was produced by a different parameter set")
    w_i = np.asarray(w_i, dtype=float)
    w_q = np.asarray(w_q, dtype=float)
    if w_i.shape != (cache.n_windows,) or w_q.shape != (cache.n_windows,):
        raise ValueError("cotangent length does not match the cached batch")
    if cache.mode == PER_QUADRATURE:
        delta = np.concatenate([w_i, w_q])[:, None]
    else:
        delta = np.stack([w_i, w_q], axis=1)
    n_layers = len(params.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = delta.T @ cache.activations[i]
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i]) * (cache.preacts[i - 1] > 0)
    return MlpParams(grad_w, grad_b)


def dpd_apply(params: MlpParams, cfg: DpdConfig, x) -> np.ndarray:
    mu, _ = dpd_forward(params, make_windows(x, cfg.half_window, cfg.mode))
    return mu


def _check_compatible(params: MlpParams, cfg: DpdConfig):
    if params.layer_sizes != cfg.layer_sizes:
        raise ValueError(f"parameter shapes {params.layer_sizes} do not match config {cfg.layer_sizes}")


def save_params(path, params: MlpParams, cfg: DpdConfig, metadata: dict | None = None) -> None:
    """Write parameters as text.

    Layout::

        RLDPD-PARAMS 1
        {"half_window": 2, "hidden_sizes": [16, 16, 16], "mode": "per-quadrature", ...}
        W <rows> <cols>
        <row-major values as float.hex, one row per line>
        b <size>
        <values as float.hex>
        ...

    Hex floats make the round trip bit-exact.
    """
    _check_compatible(params, cfg)
    header = {"half_window": cfg.half_window, "hidden_sizes": list(cfg.hidden_sizes), "mode": cfg.mode}
    if metadata:
        header["metadata"] = metadata
    lines = [f"{PARAMS_MAGIC} {PARAMS_VERSION}", json.dumps(header, sort_keys=True)]
    for w, b in zip(params.weights, params.biases):
        lines.append(f"W {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(float(v).hex() for v in row) for row in w)
        lines.append(f"b {b.size}")
        lines.append(" ".join(float(v).hex() for v in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path, expected: DpdConfig | None = None) -> tuple[MlpParams, DpdConfig, dict]:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith(PARAMS_MAGIC):
        raise ValueError(f"{path}: not a parameter file")
    version = int(lines[0].split()[1])
    if version != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported parameter file version {version}")
    header = json.loads(lines[1])
    cfg = DpdConfig(half_window=header["half_window"], hidden_sizes=tuple(header["hidden_sizes"]), mode=header["mode"])
    if expected is not None and expected != cfg:
        raise ValueError(f"{path}: stored config {cfg} does not match expected {expected}")
    weights, biases = [], []
    pos = 2
    while pos < len(lines):
        tag, rows, cols = lines[pos].split()
        rows, cols = int(rows), int(cols)
        w = np.array([[float.fromhex(v) for v in lines[pos + 1 + r].split()] for r in range(rows)])
        pos += 1 + rows
        tag_b, size = lines[pos].split()
        b = np.array([float.fromhex(v) for v in lines[pos + 1].split()]) if int(size) else np.zeros(0)
        pos += 2
        weights.append(w.reshape(rows, cols))
        biases.append(b)
    params = MlpParams(weights, biases)
    _check_compatible(params, cfg)
    return params, cfg, header.get("metadata", {})
