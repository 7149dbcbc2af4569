"""Policy-gradient training of the predistorter over a black-box channel.

Each step perturbs the DPD output with circular Gaussian noise, transmits the
perturbed waveform, recovers ``z`` with the data-aided receiver and scores
every sample by ``|z_k - x_k|^2``. The loss gradient is estimated with the
score function of the Gaussian policy, which needs no derivative of the
channel:

    grad = 1/N sum_k (r_k - b) * grad_theta log pi(y_k | mu_k)

and for ``y ~ CN(mu, s2)`` the log-density gradient with respect to the real
and imaginary parts of ``mu`` is ``2 (y - mu) / s2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import _rng
from .baselines import DpeFilter, apply_dpe
from .channel import SurrogateChannel, apply_channel
from .dsp import SPS, ROLLOFF, RRC_SPAN, receive
from .nn import DpdConfig, MlpParams, dpd_backward, dpd_forward, make_windows
from .signal import pulse_shape, qam_constellation, qam_map, rrc_taps

OPTIMIZERS = ("sgd", "adam")
SCHEDULES = ("constant", "cosine")
TELEMETRY_FIELDS = ("iteration", "mean_reward", "grad_norm", "params_checksum")


@dataclass(frozen=True)
class TrainerConfig:
    alpha: float = 0.01
    batch_n: int = 2**13
    sigma_p2: float = 4e-4
    iterations: int = 300
    baseline_subtraction: bool = True
    seed: int = 0
    optimizer: str = "adam"
    schedule: str = "constant"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.sigma_p2 <= 0:
            raise ValueError("sigma_p2 must be positive")
        if self.batch_n < 64:
            raise ValueError("batch_n must be at least 64")
        if self.batch_n % SPS:
            raise ValueError(f"batch_n must be a multiple of {SPS} samples")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def step_size(self, iteration: int) -> float:
        """Learning rate at ``iteration``; cosine decays from alpha toward 0 over the run."""
        if self.schedule == "constant" or self.iterations <= 1:
            return self.alpha
        return self.alpha * 0.5 * (1 + np.cos(np.pi * iteration / self.iterations))


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    mean_reward: float
    grad_norm: float
    params_checksum: int


def perturb(mu, sigma_p2: float, seed: int, stream: int) -> np.ndarray:
    """Draw ``y ~ CN(mu, sigma_p2)``: independent N(0, sigma_p2 / 2) per quadrature."""
    mu = np.asarray(mu, dtype=complex)
    if sigma_p2 < 0:
        raise ValueError("sigma_p2 must be nonnegative")
    if sigma_p2 == 0:
        return mu.copy()
    rng = _rng.substream(seed, _rng.PERTURBATION, stream)
    std = np.sqrt(sigma_p2 / 2)
    return mu + std * (rng.standard_normal(mu.size) + 1j * rng.standard_normal(mu.size))


def score_cotangents(y, mu, rewards, sigma_p2: float, baseline: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    if sigma_p2 <= 0:
        raise ValueError("score function undefined for sigma_p2 <= 0")
    y = np.asarray(y, dtype=complex)
    mu = np.asarray(mu, dtype=complex)
    rewards = np.asarray(rewards, dtype=float)
    if not y.shape == mu.shape == rewards.shape:
        raise ValueError("y, mu and rewards must have equal length")
    scale = 2.0 * (rewards - baseline) / (sigma_p2 * rewards.size)
    d = y - mu
    return scale * d.real, scale * d.imag


def reward(z, x) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    x = np.asarray(x, dtype=complex)
    if z.shape != x.shape:
        raise ValueError("z and x lengths differ")
    return np.abs(z - x) ** 2


class Adam:
    """Adam moments for a flat parameter vector (standard bias-corrected form)."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def direction(self, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class StepResult:
    params: MlpParams
    record: TrainRecord
    gradient: MlpParams


def estimate_gradient(
    params: MlpParams,
    cfg: DpdConfig,
    tcfg: TrainerConfig,
    x,
    channel: SurrogateChannel,
    dsp,
    iteration: int,
    dpe: DpeFilter | None = None,
    reward_override: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[MlpParams, np.ndarray]:
    """One score-function gradient estimate and the per-sample rewards."""
    x = np.asarray(x, dtype=complex)
    if x.size < tcfg.batch_n:
        raise ValueError(f"reference has {x.size} samples, batch needs {tcfg.batch_n}")
    x = x[:tcfg.batch_n]
    mu, cache = dpd_forward(params, make_windows(x, cfg.half_window, cfg.mode))
    y = perturb(mu, tcfg.sigma_p2, tcfg.seed, iteration)
    tx = apply_dpe(y, dpe) if dpe is not None else y
    rx = apply_channel(tx, channel, noise_stream=iteration)
    z = receive(rx, x, dsp)
    r = reward(z, x)
    if reward_override is not None:
        r = reward_override(r)
    # shifted mean keeps r - b exactly zero for constant rewards
    b = float(r[0] + np.mean(r - r[0])) if tcfg.baseline_subtraction else 0.0
    w_i, w_q = score_cotangents(y, mu, r, tcfg.sigma_p2, b)
    return dpd_backward(params, cache, w_i, w_q), r


def train_step(
    params: MlpParams,
    cfg: DpdConfig,
    tcfg: TrainerConfig,
    x,
    channel: SurrogateChannel,
    dsp,
    iteration: int,
    dpe: DpeFilter | None = None,
    optimizer: Adam | None = None,
    reward_override=None,
) -> StepResult:
    """Estimate the gradient on one batch and take one optimizer step.

    With ``tcfg.optimizer == "sgd"`` and a constant schedule the update is
    exactly ``theta - alpha * grad``; with ``"adam"`` the step direction comes
    from ``optimizer`` (a fresh :class:`Adam` if none is passed).
    """
    grad, r = estimate_gradient(params, cfg, tcfg, x, channel, dsp, iteration, dpe, reward_override)
    g = grad.flat()
    if tcfg.optimizer == "adam":
        optimizer = optimizer or Adam()
        step = optimizer.direction(g)
    else:
        step = g
    new = params.with_flat(params.flat() - tcfg.step_size(iteration) * step)
    new.check_finite()
    record = TrainRecord(
        iteration=iteration,
        mean_reward=float(np.mean(r)),
        grad_norm=float(np.linalg.norm(g)),
        params_checksum=new.checksum(),
    )
    return StepResult(new, record, grad)


@dataclass(frozen=True)
class PayloadSource:
    """Fresh random QAM payload per iteration, pulse shaped at 2 samples/symbol."""

    order: int = 64
    seed: int = 0
    rolloff: float = ROLLOFF
    span_symbols: int = RRC_SPAN

    def batch(self, iteration: int, n_samples: int) -> np.ndarray:
        c = qam_constellation(self.order)
        n_sym = n_samples // SPS
        rng = _rng.substream(self.seed, _rng.PAYLOAD, iteration)
        bits = rng.integers(0, 2, size=n_sym * c.bits_per_symbol, dtype=np.uint8)
        return pulse_shape(qam_map(bits, c), rrc_taps(self.rolloff, SPS, self.span_symbols), SPS)


def train(
    params: MlpParams,
    cfg: DpdConfig,
    tcfg: TrainerConfig,
    source: PayloadSource,
    channel: SurrogateChannel,
    dsp,
    dpe: DpeFilter | None = None,
    progress: Callable[[TrainRecord], None] | None = None,
) -> tuple[MlpParams, list[TrainRecord]]:
    """Run ``tcfg.iterations`` training steps; returns final params and telemetry."""
    optimizer = Adam() if tcfg.optimizer == "adam" else None
    records = []
    for it in range(tcfg.iterations):
        x = source.batch(it, tcfg.batch_n)
        res = train_step(params, cfg, tcfg, x, channel, dsp, it, dpe=dpe, optimizer=optimizer)
        params = res.params
        records.append(res.record)
        if progress is not None:
            progress(res.record)
    return params, records


def write_telemetry(path, records: Iterable[TrainRecord]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TELEMETRY_FIELDS)
        for rec in records:
            writer.writerow([rec.iteration, repr(rec.mean_reward), repr(rec.grad_norm), rec.params_checksum])
