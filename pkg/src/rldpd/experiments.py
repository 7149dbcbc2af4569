"""Experiment configuration and the study commands behind the CLI.

Every command is a pure function of the resolved configuration and the seed
list: rows are computed sequentially, sorted, and written with ``repr``
floats, so repeated runs produce byte-identical CSV files.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import DEFAULT_CLIP_GRID, ClipArcsine, DpeFilter, design_dpe, optimize_clip
from .channel import SurrogateChannel, design_dac_fir
from .dsp import SPS, DspConfig, eval_ber
from .link import arcsine_chain, dpe_chain, nn_chain
from .nn import DpdConfig, MlpParams, init_params, load_params, save_params
from .signal import qam_constellation, rrc_taps
from .trainer import PayloadSource, TrainerConfig, train, write_telemetry

log = logging.getLogger(__name__)

FULL_SCALE_BATCH_N = 2**17
FINAL_REWARD_WINDOW = 10
# clip levels are calibrated on data independent of the reported BER
CLIP_CALIBRATION_OFFSET = 7919


class ConfigError(ValueError):
    pass


class MissingParamsError(FileNotFoundError):
    def __init__(self, missing: Sequence[Path]):
        self.missing = list(missing)
        listing = "\n  ".join(str(p) for p in self.missing)
        super().__init__(
            f"{len(self.missing)} trained parameter file(s) missing "
            f"(run `train` first or pass --train-on-demand):\n  {listing}"
        )


@dataclass(frozen=True)
class ExperimentConfig:
    # channel
    cutoff: float = dataclasses.field(default=0.4, metadata={"doc": "DAC cutoff, cycles/sample (24 GHz at 60 GS/s)"})
    dac_taps: int = dataclasses.field(default=31, metadata={"doc": "DAC FIR length (odd)"})
    vpi: float = dataclasses.field(default=1.0, metadata={"doc": "modulator half-wave voltage"})
    noise_sigma2: float = dataclasses.field(default=0.003, metadata={"doc": "complex receiver noise variance per sample"})
    # signal
    order: int = dataclasses.field(default=64, metadata={"doc": "QAM order used for training and the main sweeps"})
    transfer_order: int = dataclasses.field(default=256, metadata={"doc": "QAM order evaluated with the order-trained DPD"})
    symbol_rate: str = dataclasses.field(default="30GBaud", metadata={"doc": "informational label"})
    rolloff: float = dataclasses.field(default=0.1, metadata={"doc": "RRC roll-off"})
    rrc_span: int = dataclasses.field(default=32, metadata={"doc": "RRC span in symbols"})
    # baselines
    dpe_lambda: float = dataclasses.field(default=1e-3, metadata={"doc": "DPE regularization"})
    dpe_taps: int = dataclasses.field(default=63, metadata={"doc": "DPE length (odd)"})
    clip_grid: tuple = dataclasses.field(default=DEFAULT_CLIP_GRID, metadata={"doc": "arcsine clip levels searched"})
    # sweeps
    drive_grid: tuple = dataclasses.field(default=(0.3, 0.45, 0.6, 0.75, 0.9, 1.05), metadata={"doc": "drive ratios kappa, strictly increasing"})
    window_len: int = dataclasses.field(default=5, metadata={"doc": "DPD input length 2L+1 for train and sweep-vpp"})
    window_grid: tuple = dataclasses.field(default=(1, 3, 5, 7, 9), metadata={"doc": "DPD input lengths for sweep-length"})
    length_kappa: float = dataclasses.field(default=0.9, metadata={"doc": "drive ratio of sweep-length"})
    seeds: tuple = dataclasses.field(default=(0, 1, 2), metadata={"doc": "seeds; each seeds init, payload, perturbation and noise"})
    payload_symbols: int = dataclasses.field(default=100_000, metadata={"doc": "payload symbols per BER point"})
    preamble_symbols: int = dataclasses.field(default=4096, metadata={"doc": "known preamble symbols for receiver adaptation"})
    # network
    hidden_sizes: tuple = dataclasses.field(default=(16, 16, 16), metadata={"doc": "hidden layer widths"})
    mode: str = dataclasses.field(default="per-quadrature", metadata={"doc": "per-quadrature or joint-iq"})
    # trainer
    alpha: float = dataclasses.field(default=0.01, metadata={"doc": "learning rate"})
    batch_n: int = dataclasses.field(default=2**13, metadata={"doc": "samples per training batch (2**17 with --paper-scale)"})
    sigma_p2: float = dataclasses.field(default=4e-4, metadata={"doc": "perturbation variance"})
    iterations: int = dataclasses.field(default=300, metadata={"doc": "training iterations"})
    baseline_subtraction: bool = dataclasses.field(default=True, metadata={"doc": "subtract the batch-mean reward"})
    optimizer: str = dataclasses.field(default="adam", metadata={"doc": "adam or sgd"})
    schedule: str = dataclasses.field(default="cosine", metadata={"doc": "step-size schedule: constant or cosine decay to 0"})
    # receiver
    eq_taps: int = dataclasses.field(default=31, metadata={"doc": "LMS equalizer taps (odd)"})
    eq_step: float = dataclasses.field(default=1e-3, metadata={"doc": "LMS step size"})
    eq_passes: int = dataclasses.field(default=3, metadata={"doc": "LMS passes over the known data"})
    sync_search: int = dataclasses.field(default=64, metadata={"doc": "time-sync search range in samples"})
    output_dir: str = dataclasses.field(default="results", metadata={"doc": "default output directory"})

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(f"invalid value for '{key}': {why}")

        for key in ("clip_grid", "drive_grid", "window_grid", "seeds", "hidden_sizes"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        grid = self.drive_grid
        if not grid:
            bad("drive_grid", "must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            bad("drive_grid", "must be strictly increasing")
        if any(k <= 0 for k in grid):
            bad("drive_grid", "drive ratios must be positive")
        if not self.seeds:
            bad("seeds", "need at least one seed")
        if any(s < 0 for s in self.seeds):
            bad("seeds", "seeds must be nonnegative")
        for key in ("window_len",):
            v = getattr(self, key)
            if v < 1 or v % 2 == 0:
                bad(key, "must be a positive odd integer")
        if any(w < 1 or w % 2 == 0 for w in self.window_grid) or not self.window_grid:
            bad("window_grid", "must be a nonempty list of positive odd integers")
        if not self.clip_grid or any(not 0 < c <= 1 for c in self.clip_grid):
            bad("clip_grid", "clip levels must lie in (0, 1]")
        if not 0 < self.cutoff < 0.5:
            bad("cutoff", "must lie in (0, 0.5)")
        if self.dac_taps < 9 or self.dac_taps % 2 == 0:
            bad("dac_taps", "must be odd and >= 9")
        if self.dpe_taps % 2 == 0 or self.dpe_taps < self.dac_taps:
            bad("dpe_taps", "must be odd and at least dac_taps")
        if self.noise_sigma2 < 0:
            bad("noise_sigma2", "must be nonnegative")
        if self.payload_symbols < 1 or self.preamble_symbols < 1:
            bad("payload_symbols", "payload and preamble must be positive")
        for key in ("order", "transfer_order"):
            try:
                qam_constellation(getattr(self, key))
            except ValueError as exc:
                bad(key, str(exc))
        # the component configs carry their own checks; surface them by key
        for key, build in (
            ("mode", lambda: self.dpd_config()),
            ("hidden_sizes", lambda: self.dpd_config()),
            ("optimizer", lambda: self.trainer_config(0)),
            ("schedule", lambda: self.trainer_config(0)),
            ("alpha", lambda: self.trainer_config(0)),
            ("batch_n", lambda: self.trainer_config(0)),
            ("sigma_p2", lambda: self.trainer_config(0)),
            ("eq_taps", lambda: self.dsp_config()),
            ("eq_step", lambda: self.dsp_config()),
        ):
            try:
                build()
            except ValueError as exc:
                bad(key, str(exc))

    # component builders -------------------------------------------------
    def dac_fir(self) -> np.ndarray:
        return design_dac_fir(self.cutoff, self.dac_taps)

    def dpe(self) -> DpeFilter:
        return design_dpe(self.dac_fir(), self.dpe_lambda, self.dpe_taps)

    def channel(self, kappa: float, seed: int) -> SurrogateChannel:
        return SurrogateChannel(self.dac_fir(), drive_ratio=kappa, vpi=self.vpi, noise_sigma2=self.noise_sigma2, seed=seed)

    def dpd_config(self, window_len: int | None = None) -> DpdConfig:
        w = self.window_len if window_len is None else window_len
        return DpdConfig(half_window=(w - 1) // 2, hidden_sizes=self.hidden_sizes, mode=self.mode)

    def trainer_config(self, seed: int) -> TrainerConfig:
        return TrainerConfig(
            alpha=self.alpha,
            batch_n=self.batch_n,
            sigma_p2=self.sigma_p2,
            iterations=self.iterations,
            baseline_subtraction=self.baseline_subtraction,
            seed=seed,
            optimizer=self.optimizer,
            schedule=self.schedule,
        )

    def dsp_config(self) -> DspConfig:
        return DspConfig(self.eq_taps, self.eq_step, self.eq_passes, self.sync_search)

    def rrc(self) -> np.ndarray:
        return rrc_taps(self.rolloff, SPS, self.rrc_span)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in dataclasses.fields(self)}


CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value, default):
    """Check a parsed value against the type of the field's default."""
    def fail(expected):
        raise ConfigError(f"invalid value for '{key}': expected {expected}, got {value!r}")

    if isinstance(default, bool):
        if not isinstance(value, bool):
            fail("true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            fail("a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            fail("a list")
        elem = default[0] if default else 0.0
        return tuple(_coerce(key, v, elem) for v in value)
    return value


def config_from_dict(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    data = dict(data)
    if overrides:
        data.update(overrides)
    kwargs = {}
    for key, value in data.items():
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        kwargs[key] = _coerce(key, value, CONFIG_FIELDS[key].default)
    return ExperimentConfig(**kwargs)


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a flat TOML file; absent keys take their documented defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"config must be flat; '{key}' is a table")
    return config_from_dict(data, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def echo_config(cfg: ExperimentConfig, out_dir: Path) -> Path:
    path = out_dir / "config.resolved.toml"
    path.write_text(dump_config(cfg))
    return path


# records ----------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentRecord:
    scheme: str
    kappa: float
    order: int
    window_len: int | None
    seed: int
    ber: float
    mean_reward_final: float | None = None
    wall_time_s: float | None = None
    metadata: str = ""

    def __post_init__(self):
        if not 0.0 <= self.ber <= 0.5:
            raise ValueError(f"BER {self.ber} outside [0, 0.5]")


RECORD_FIELDS = tuple(f.name for f in dataclasses.fields(ExperimentRecord))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(path: Path, records: Iterable[ExperimentRecord]) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, name)) for name in RECORD_FIELDS])
    return path


def read_records(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_plot_data(out_dir: Path, prefix: str, records: Sequence[ExperimentRecord], x_field: str) -> list[Path]:
    """Two-column files (x, seed-averaged BER), one per (scheme, order)."""
    groups: dict[tuple, dict] = {}
    for rec in records:
        x = getattr(rec, x_field)
        if x is None:
            continue
        groups.setdefault((rec.scheme, rec.order), {}).setdefault(x, []).append(rec.ber)
    paths = []
    for (scheme, order), points in sorted(groups.items()):
        path = out_dir / f"{prefix}_{scheme.replace('+', '_')}_qam{order}.dat"
        lines = [f"# {x_field} mean_ber"]
        lines += [f"{x!r} {float(np.mean(b))!r}" for x, b in sorted(points.items())]
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def _sort_key(rec: ExperimentRecord):
    return (rec.order, rec.scheme, rec.kappa, rec.window_len or 0, rec.seed)


# helpers ------------------------------------------------------------------

class Timer:
    def __init__(self, enabled: bool):
        self.enabled = enabled

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0 if self.enabled else None


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def params_name(order: int, kappa: float, window_len: int, seed: int) -> str:
    return f"dpd_qam{order}_k{kappa:.3f}_w{window_len}_s{seed}.params"


def params_path(out_dir: Path, order: int, kappa: float, window_len: int, seed: int) -> Path:
    return Path(out_dir) / "params" / params_name(order, kappa, window_len, seed)


def telemetry_path(out_dir: Path, order: int, kappa: float, window_len: int, seed: int) -> Path:
    return Path(out_dir) / "telemetry" / f"telemetry_qam{order}_k{kappa:.3f}_w{window_len}_s{seed}.csv"


def _eval(cfg: ExperimentConfig, order: int, transmit, kappa: float, seed: int) -> float:
    return eval_ber(
        qam_constellation(order),
        transmit,
        cfg.channel(kappa, seed),
        cfg.dsp_config(),
        cfg.payload_symbols,
        seed,
        preamble_symbols=cfg.preamble_symbols,
        taps=cfg.rrc(),
    ).ber


def best_clip(cfg: ExperimentConfig, order: int, kappa: float, seed: int, dpe: DpeFilter) -> ClipArcsine:
    calib = seed + CLIP_CALIBRATION_OFFSET

    def evaluate(level):
        return _eval(cfg, order, arcsine_chain(dpe, ClipArcsine(level, cfg.vpi)), kappa, calib)

    return optimize_clip(cfg.clip_grid, evaluate, cfg.vpi)


def baseline_records(cfg: ExperimentConfig, order: int, kappa: float, seed: int, timing: bool = False) -> list[ExperimentRecord]:
    dpe = cfg.dpe()
    with Timer(timing) as t:
        ber = _eval(cfg, order, dpe_chain(dpe, cfg.vpi), kappa, seed)
    rows = [ExperimentRecord("dpe", kappa, order, None, seed, ber, wall_time_s=t.elapsed)]
    with Timer(timing) as t:
        clip = best_clip(cfg, order, kappa, seed, dpe)
        ber = _eval(cfg, order, arcsine_chain(dpe, clip), kappa, seed)
    rows.append(
        ExperimentRecord("dpe+arcsine", kappa, order, None, seed, ber, wall_time_s=t.elapsed, metadata=f"clip={clip.clip_level!r}")
    )
    return rows


# commands ------------------------------------------------------------------

def cmd_baselines(cfg: ExperimentConfig, out_dir, seeds: Sequence[int] | None = None, timing: bool = False) -> list[ExperimentRecord]:
    out = _prepare_out(out_dir)
    echo_config(cfg, out)
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    records = []
    for kappa in cfg.drive_grid:
        for seed in seeds:
            log.info("baselines kappa=%s seed=%s", kappa, seed)
            records += baseline_records(cfg, cfg.order, kappa, seed, timing)
    records.sort(key=lambda r: (r.scheme, r.kappa, r.seed))
    write_records(out / "baselines.csv", records)
    write_plot_data(out, "baselines", records, "kappa")
    return records


def train_one(cfg: ExperimentConfig, out_dir, kappa: float, window_len: int, seed: int) -> Path:
    """Train one DPD at the configured training order and write params + telemetry."""
    if window_len < 1 or window_len % 2 == 0:
        raise ValueError("window_len must be a positive odd integer")
    out = Path(out_dir)
    dcfg = cfg.dpd_config(window_len)
    tcfg = cfg.trainer_config(seed)
    log.info("train qam%d kappa=%s window=%d seed=%d", cfg.order, kappa, window_len, seed)
    params, records = train(
        init_params(dcfg, seed),
        dcfg,
        tcfg,
        PayloadSource(cfg.order, seed, cfg.rolloff, cfg.rrc_span),
        cfg.channel(kappa, seed),
        cfg.dsp_config(),
        dpe=cfg.dpe(),
    )
    tail = records[-FINAL_REWARD_WINDOW:]
    final = float(np.mean([r.mean_reward for r in tail])) if tail else math.nan
    ppath = params_path(out, cfg.order, kappa, window_len, seed)
    tpath = telemetry_path(out, cfg.order, kappa, window_len, seed)
    ppath.parent.mkdir(parents=True, exist_ok=True)
    tpath.parent.mkdir(parents=True, exist_ok=True)
    meta = {"order": cfg.order, "kappa": kappa, "seed": seed, "iterations": tcfg.iterations,
            "batch_n": tcfg.batch_n, "mean_reward_final": final}
    save_params(ppath, params, dcfg, meta)
    write_telemetry(tpath, records)
    return ppath


def cmd_train(cfg: ExperimentConfig, out_dir, kappa: float, window_len: int, seeds: Sequence[int] | None = None) -> list[Path]:
    out = _prepare_out(out_dir)
    echo_config(cfg, out)
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    return [train_one(cfg, out, kappa, window_len, s) for s in seeds]


def _require_params(cfg, out, cells, train_on_demand) -> dict:
    paths = {cell: params_path(out, cfg.order, *cell) for cell in cells}
    missing = [p for p in paths.values() if not p.exists()]
    if missing and not train_on_demand:
        raise MissingParamsError(missing)
    for cell, p in paths.items():
        if not p.exists():
            train_one(cfg, out, *cell)
    return paths


def _nn_record(cfg, path: Path, order: int, kappa: float, window_len: int, seed: int, timing: bool) -> ExperimentRecord:
    params, dcfg, meta = load_params(path, cfg.dpd_config(window_len))
    with Timer(timing) as t:
        ber = _eval(cfg, order, nn_chain(params, dcfg, cfg.dpe()), kappa, seed)
    return ExperimentRecord(
        "nn-dpd", kappa, order, window_len, seed, ber,
        mean_reward_final=meta.get("mean_reward_final"), wall_time_s=t.elapsed,
        metadata=f"params={path.name}",
    )


def cmd_sweep_vpp(
    cfg: ExperimentConfig,
    out_dir,
    seeds: Sequence[int] | None = None,
    train_on_demand: bool = False,
    timing: bool = False,
) -> list[ExperimentRecord]:
    """BER versus drive for the training order and, with the same DPDs, the transfer order."""
    out = _prepare_out(out_dir)
    echo_config(cfg, out)
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    w = cfg.window_len
    cells = [(k, w, s) for k in cfg.drive_grid for s in seeds]
    paths = _require_params(cfg, out, cells, train_on_demand)
    orders = [cfg.order] + ([cfg.transfer_order] if cfg.transfer_order != cfg.order else [])
    records = []
    for order in orders:
        for kappa in cfg.drive_grid:
            for seed in seeds:
                log.info("sweep-vpp qam%d kappa=%s seed=%s", order, kappa, seed)
                records += baseline_records(cfg, order, kappa, seed, timing)
                records.append(_nn_record(cfg, paths[(kappa, w, seed)], order, kappa, w, seed, timing))
    records.sort(key=_sort_key)
    write_records(out / "sweep_vpp.csv", records)
    write_plot_data(out, "sweep_vpp", records, "kappa")
    return records


def cmd_sweep_length(
    cfg: ExperimentConfig,
    out_dir,
    seeds: Sequence[int] | None = None,
    train_on_demand: bool = True,
    timing: bool = False,
) -> list[ExperimentRecord]:
    """BER versus DPD input length at ``length_kappa``; every length gets the same iteration budget."""
    out = _prepare_out(out_dir)
    echo_config(cfg, out)
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    kappa = cfg.length_kappa
    cells = [(kappa, w, s) for w in cfg.window_grid for s in seeds]
    paths = _require_params(cfg, out, cells, train_on_demand)
    records = []
    for seed in seeds:
        records += baseline_records(cfg, cfg.order, kappa, seed, timing)
        for w in cfg.window_grid:
            log.info("sweep-length window=%d seed=%s", w, seed)
            records.append(_nn_record(cfg, paths[(kappa, w, seed)], cfg.order, kappa, w, seed, timing))
    records.sort(key=_sort_key)
    write_records(out / "sweep_length.csv", records)
    write_plot_data(out, "sweep_length", [r for r in records if r.scheme == "nn-dpd"], "window_len")
    return records


def seed_mean(records: Iterable[ExperimentRecord], **match) -> float:
    bers = [r.ber for r in records if all(getattr(r, k) == v for k, v in match.items())]
    if not bers:
        raise KeyError(f"no records match {match}")
    return float(np.mean(bers))
