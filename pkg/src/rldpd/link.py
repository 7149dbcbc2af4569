"""Transmit chains for the three schemes under comparison.

Each chain maps the pulse-shaped reference ``x`` to the DAC input:

* ``dpe``          full-scale(x) -> DPE
* ``dpe+arcsine``  arcsine(x, clip) -> full-scale -> DPE
* ``nn-dpd``       NN(x) -> DPE

"Full scale" scales a waveform so its largest quadrature magnitude equals
``vpi``; after clipping this is what turns a lower peak into a higher average
drive. The NN output is not rescaled: its amplitude is learned, and a
data-dependent gain would make the channel seen by the policy change with
every perturbation draw.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .baselines import ClipArcsine, DpeFilter, apply_dpe, arcsine_predistort, quadrature_peak
from .nn import DpdConfig, MlpParams, dpd_apply

SCHEMES = ("dpe", "dpe+arcsine", "nn-dpd")

Transmit = Callable[[np.ndarray], np.ndarray]


def full_scale(signal, vpi: float = 1.0) -> np.ndarray:
    signal = np.asarray(signal, dtype=complex)
    peak = quadrature_peak(signal)
    return signal * (vpi / peak) if peak > 0 else signal


def dpe_chain(dpe: DpeFilter, vpi: float = 1.0) -> Transmit:
    return lambda x: apply_dpe(full_scale(x, vpi), dpe)


def arcsine_chain(dpe: DpeFilter, clip: ClipArcsine) -> Transmit:
    return lambda x: apply_dpe(full_scale(arcsine_predistort(x, clip), clip.vpi), dpe)


def nn_chain(params: MlpParams, cfg: DpdConfig, dpe: DpeFilter | None) -> Transmit:
    def transmit(x):
        mu = dpd_apply(params, cfg, x)
        return apply_dpe(mu, dpe) if dpe is not None else mu

    return transmit
