"""Command-line entry point: ``rldpd {baselines,train,sweep-vpp,sweep-length}``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex

log = logging.getLogger("rldpd")


def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("need at least one nonnegative seed")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rldpd", description="Predistortion experiments on a surrogate optical link.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat TOML config; absent keys use defaults")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")
        p.add_argument("--seeds", type=_seeds, help="comma-separated seeds overriding the config")
        p.add_argument("--paper-scale", action="store_true", help=f"train with batch_n = {ex.FULL_SCALE_BATCH_N}")
        p.add_argument("--timing", action="store_true", help="fill the wall_time_s column")
        p.add_argument("--train-on-demand", action=argparse.BooleanOptionalAction, default=None,
                       help="train missing parameter files instead of failing "
                            "(sweeps only; default off for sweep-vpp, on for sweep-length)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("baselines", help="DPE-only and DPE+arcsine BER versus drive"))
    p = common(sub.add_parser("train", help="train the NN predistorter at one drive ratio"))
    p.add_argument("--kappa", type=float, required=True, help="drive ratio")
    p.add_argument("--window-len", type=int, help="DPD input length 2L+1 (default: window_len from the config)")
    common(sub.add_parser("sweep-vpp", help="BER versus drive for all schemes, plus the transfer order"))
    common(sub.add_parser("sweep-length", help="NN BER versus DPD input length"))
    return parser


def _load_config(args) -> ex.ExperimentConfig:
    overrides = {"batch_n": ex.FULL_SCALE_BATCH_N} if args.paper_scale else None
    if args.config:
        return ex.parse_config(args.config, overrides)
    return ex.config_from_dict({}, overrides)


def run(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg.output_dir
    if args.command == "baselines":
        ex.cmd_baselines(cfg, out, args.seeds, timing=args.timing)
    elif args.command == "train":
        w = cfg.window_len if args.window_len is None else args.window_len
        for path in ex.cmd_train(cfg, out, args.kappa, w, args.seeds):
            print(path)
    elif args.command == "sweep-vpp":
        ex.cmd_sweep_vpp(cfg, out, args.seeds, train_on_demand=bool(args.train_on_demand), timing=args.timing)
    elif args.command == "sweep-length":
        ex.cmd_sweep_length(cfg, out, args.seeds, train_on_demand=args.train_on_demand is not False, timing=args.timing)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ex.ConfigError, ex.MissingParamsError, OSError, ValueError) as exc:
        print(f"rldpd {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
