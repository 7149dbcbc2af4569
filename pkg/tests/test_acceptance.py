"""Acceptance criteria A1-A10 at their stated tolerances.

Each test prints a single ``A<n> PASS|FAIL`` line (also collected in the
terminal summary). The training-based criteria share one set of trained
predistorters produced through the experiment commands with the default
configuration.
"""
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest
from scipy.special import erfc

from rldpd import experiments as ex
from rldpd.baselines import ClipArcsine, arcsine_predistort, design_dpe
from rldpd.channel import SurrogateChannel, design_dac_fir, expected_loss_oracle, iqm_transfer
from rldpd.dsp import DspConfig, FrozenReceiver, eval_ber
from rldpd.nn import JOINT_IQ, PER_QUADRATURE, DpdConfig, MlpParams, dpd_backward, dpd_forward, init_params, make_windows
from rldpd.signal import qam_constellation
from rldpd.trainer import PayloadSource, TrainerConfig, estimate_gradient

KAPPA_MAIN = 0.9
KAPPA_TRANSFER = (0.75, 0.9)


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def study(tmp_path_factory):
    """Default-config sweeps at the drive ratios and windows the criteria need."""
    out = tmp_path_factory.mktemp("study")
    cfg = ex.config_from_dict({"drive_grid": list(KAPPA_TRANSFER), "window_grid": [1, 5], "length_kappa": KAPPA_MAIN})
    assert cfg.window_len == 5 and cfg.iterations == 300 and cfg.batch_n == 2**13 and cfg.seeds == (0, 1, 2)
    t0 = time.perf_counter()
    vpp = ex.cmd_sweep_vpp(cfg, out, train_on_demand=True)
    t1 = time.perf_counter()
    length = ex.cmd_sweep_length(cfg, out)
    t2 = time.perf_counter()
    return {"cfg": cfg, "out": out, "vpp": vpp, "length": length, "t_vpp": t1 - t0, "t_length": t2 - t1}


def _tiny_system():
    """Memoryless frozen fixture: identity DAC, no DPE, fixed receiver gain, no noise."""
    kappa = 0.9
    ch = SurrogateChannel(np.array([1.0]), drive_ratio=kappa, noise_sigma2=0.0)
    rx = FrozenReceiver(gain=1.0 / (kappa * np.pi / 2))
    cfg = DpdConfig(half_window=1, hidden_sizes=(4,))
    x = PayloadSource(64, 5).batch(0, 256)
    return cfg, init_params(cfg, 0), x, ch, rx


def _draws(baseline: bool, n_draws: int):
    cfg, p, x, ch, rx = _tiny_system()
    tc = TrainerConfig(batch_n=x.size, seed=11, baseline_subtraction=baseline)
    return np.array([estimate_gradient(p, cfg, tc, x, ch, rx, d)[0].flat() for d in range(n_draws)])


# ---------------------------------------------------------------- A1-A4

def test_a1_gradient_unbiased(acceptance):
    t0 = time.perf_counter()
    cfg, p, x, ch, rx = _tiny_system()
    mean = _draws(True, 10_000).mean(axis=0)
    v, h = p.flat(), 1e-5
    fd = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        fd[i] = (expected_loss_oracle(p.with_flat(v + e), cfg, x, ch, rx)
                 - expected_loss_oracle(p.with_flat(v - e), cfg, x, ch, rx)) / (2 * h)
    cos = mean @ fd / (np.linalg.norm(mean) * np.linalg.norm(fd))
    rel = abs(np.linalg.norm(mean) - np.linalg.norm(fd)) / np.linalg.norm(fd)
    dt = time.perf_counter() - t0
    acceptance("A1", cos >= 0.95 and rel <= 0.10 and dt <= 120,
               f"cosine={cos:.5f} (>=0.95) rel_mag_err={rel:.4f} (<=0.10) runtime={dt:.1f}s")


def _a2_case(mode, seed):
    cfg = DpdConfig(half_window=1, hidden_sizes=(4, 4, 4), mode=mode)
    rng = np.random.default_rng(seed)
    base = init_params(cfg, seed)
    p = MlpParams([rng.standard_normal(w.shape) for w in base.weights],
                  [0.3 * rng.standard_normal(b.shape) for b in base.biases])
    x = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    batch = make_windows(x, 1, mode)
    _, cache = dpd_forward(p, batch)
    if min(np.min(np.abs(z)) for z in cache.preacts) < 1e-3:
        return None
    w_i, w_q = rng.standard_normal(8), rng.standard_normal(8)
    g = dpd_backward(p, cache, w_i, w_q).flat()

    def objective(vec):
        mu, _ = dpd_forward(p.with_flat(vec), batch)
        return np.sum(w_i * mu.real + w_q * mu.imag)

    v, h = p.flat(), 1e-5
    fd = np.array([(objective(v + h * e) - objective(v - h * e)) / (2 * h) for e in np.eye(v.size)])
    scale = np.maximum(np.abs(fd), 1e-6)
    return float(np.max(np.abs(g - fd) / scale))


def test_a2_backprop_exact(acceptance):
    t0 = time.perf_counter()
    worst, cases = 0.0, 0
    for mode in (PER_QUADRATURE, JOINT_IQ):
        seed = 0
        while cases < (5 if mode == PER_QUADRATURE else 10):
            err = _a2_case(mode, seed)
            seed += 1
            if err is not None:
                worst, cases = max(worst, err), cases + 1
    dt = time.perf_counter() - t0
    acceptance("A2", worst <= 1e-4 and dt <= 10, f"max_rel_err={worst:.2e} (<=1e-4) over {cases} nets runtime={dt:.2f}s")


def test_a3_arcsine_identity(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for clip in np.linspace(0.05, 1.0, 20):
        u = np.linspace(-clip, clip, 4001)
        x = u + 1j * u[::-1]
        v = arcsine_predistort(x, ClipArcsine(clip), peak=1.0)
        worst = max(worst, float(np.max(np.abs(iqm_transfer(v.real) + 1j * iqm_transfer(v.imag) - x))))
    dt = time.perf_counter() - t0
    acceptance("A3", worst < 1e-12 and dt <= 1, f"max_err={worst:.2e} (<1e-12) runtime={dt:.3f}s")


def test_a4_dpe_flatness(acceptance):
    t0 = time.perf_counter()
    h = design_dac_fir()
    g = design_dpe(h, 0.0, 63).taps
    f = np.linspace(0, 0.35, 4096)

    def resp(taps):
        return np.exp(-2j * np.pi * np.outer(f, np.arange(taps.size))) @ taps

    mag = np.abs(resp(h) * resp(g))
    ripple = 20 * np.log10(mag.max() / mag.min())
    dt = time.perf_counter() - t0
    acceptance("A4", ripple < 0.1 and dt <= 1, f"ripple={ripple:.3g} dB (<0.1) runtime={dt:.3f}s")


# ---------------------------------------------------------------- A5-A7

def test_a5_training_efficacy(study, acceptance):
    rec = study["vpp"]
    m = {s: ex.seed_mean(rec, scheme=s, order=64, kappa=KAPPA_MAIN) for s in ("dpe", "dpe+arcsine", "nn-dpd")}
    ratio = m["nn-dpd"] / m["dpe+arcsine"]
    ok = ratio <= 0.6 and m["nn-dpd"] < m["dpe"] and m["nn-dpd"] < m["dpe+arcsine"]
    acceptance("A5", ok and study["t_vpp"] <= 600,
               f"nn={m['nn-dpd']:.3e} arcsine={m['dpe+arcsine']:.3e} dpe={m['dpe']:.3e} "
               f"ratio={ratio:.3f} (<=0.6) sweep_runtime={study['t_vpp']:.0f}s")


def test_a6_cross_format_transfer(study, acceptance):
    rec = study["vpp"]
    parts, ok = [], True
    for k in KAPPA_TRANSFER:
        m = {s: ex.seed_mean(rec, scheme=s, order=256, kappa=k) for s in ("dpe", "dpe+arcsine", "nn-dpd")}
        ok &= m["nn-dpd"] < min(m["dpe"], m["dpe+arcsine"])
        parts.append(f"k={k}: nn={m['nn-dpd']:.3e} arcsine={m['dpe+arcsine']:.3e} dpe={m['dpe']:.3e}")
    nn_rows = [r for r in rec if r.scheme == "nn-dpd" and r.order == 256]
    ok &= all("qam64" in r.metadata for r in nn_rows)
    acceptance("A6", bool(ok) and study["t_vpp"] <= 300, "; ".join(parts) + f" sweep_runtime={study['t_vpp']:.0f}s")


def test_a7_input_length_trend(study, acceptance):
    rec = study["length"]
    w1 = ex.seed_mean(rec, scheme="nn-dpd", window_len=1)
    w5 = ex.seed_mean(rec, scheme="nn-dpd", window_len=5)
    dpe = ex.seed_mean(rec, scheme="dpe")
    total = study["t_length"] + study["t_vpp"]
    acceptance("A7", w5 <= w1 and w1 < dpe and total <= 900,
               f"w5={w5:.3e} w1={w1:.3e} dpe={dpe:.3e} (need w5<=w1, w1<dpe) runtime={total:.0f}s")


# ---------------------------------------------------------------- A8-A10

def test_a8_awgn_ber(acceptance):
    t0 = time.perf_counter()
    kappa, es_n0_db = 0.1, 16.0
    gain = kappa * np.pi / 2
    ch = SurrogateChannel(np.array([1.0]), drive_ratio=kappa, noise_sigma2=gain**2 / 10 ** (es_n0_db / 10), seed=0)
    res = eval_ber(qam_constellation(16), lambda x: x, ch, DspConfig(), 500_000, 0)
    es_n0 = 10 ** (es_n0_db / 10)
    theory = 0.75 * 0.5 * erfc(np.sqrt(3 * es_n0 / 15) / np.sqrt(2))
    rel = res.ber / theory - 1
    dt = time.perf_counter() - t0
    acceptance("A8", abs(rel) <= 0.15 and res.bits >= 2_000_000 and dt <= 60,
               f"ber={res.ber:.4e} theory={theory:.4e} rel_dev={rel:+.3f} (|.|<=0.15) bits={res.bits} runtime={dt:.1f}s")


def test_a9_determinism_and_reload(study, acceptance, tmp_path):
    t0 = time.perf_counter()
    cfg = ex.config_from_dict({"drive_grid": [KAPPA_MAIN], "seeds": [1], "iterations": 20})
    for d in ("a", "b"):
        ex.cmd_baselines(cfg, tmp_path / d)
        ex.cmd_train(cfg, tmp_path / d, KAPPA_MAIN, 5)
    same = []
    for rel in ("baselines.csv", "params/dpd_qam64_k0.900_w5_s1.params", "telemetry/telemetry_qam64_k0.900_w5_s1.csv"):
        same.append((tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes())

    # reload trained parameters in a fresh interpreter and re-evaluate
    scfg = study["cfg"]
    target = [r for r in study["vpp"] if r.scheme == "nn-dpd" and r.order == 64 and r.kappa == KAPPA_MAIN and r.seed == 0][0]
    path = ex.params_path(study["out"], 64, KAPPA_MAIN, 5, 0)
    code = textwrap.dedent(f"""
        from rldpd import experiments as ex
        cfg = ex.config_from_dict({scfg.to_dict()!r})
        print(repr(ex._nn_record(cfg, ex.Path({str(path)!r}), 64, {KAPPA_MAIN!r}, 5, 0, False).ber))
    """)
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    fresh = float(proc.stdout.strip())
    dt = time.perf_counter() - t0
    ok = all(same) and fresh == target.ber and dt <= 120
    acceptance("A9", ok, f"byte_identical={same} reload_ber={fresh!r} original_ber={target.ber!r} runtime={dt:.1f}s")


def test_a10_baseline_reduces_variance(acceptance):
    t0 = time.perf_counter()
    with_b = _draws(True, 5_000)
    without = _draws(False, 5_000)
    v_with, v_without = float(with_b.var(axis=0).sum()), float(without.var(axis=0).sum())
    dt = time.perf_counter() - t0
    acceptance("A10", v_with <= v_without and dt <= 120,
               f"var_with_baseline={v_with:.4g} var_without={v_without:.4g} runtime={dt:.1f}s")
