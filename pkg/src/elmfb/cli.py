"""Command-line entry point: ``elmfb {sweep,overhead,train,infer,signals}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .elm import infer
from .formats import FormatError, load_receiver, read_signals, save_receiver, write_signals
from .harness import (
    ConfigError,
    ExperimentConfig,
    TrainingError,
    emit_results,
    format_results,
    parse_snr_grid,
    run_sweep,
    train_receiver,
)
from .metrics import overhead_report, snr_to_sigma2
from .numerics import RngStream
from .phy import (
    PowerProfile,
    build_walsh,
    coarse_estimate,
    draw_channel,
    qpsk_demodulate,
    qpsk_modulate,
    superimpose,
    uplink_transmit,
)

log = logging.getLogger("elmfb")

SIGNAL_STREAM = 7


def _methods(text):
    return tuple(m.strip() for m in text.split(",") if m.strip())


def _add_config_args(p):
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--Eu", type=float)
    p.add_argument("--Nt", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-sigma2", type=float, dest="train_sigma2")
    p.add_argument("--ridge", type=float)


def _load_config(args) -> ExperimentConfig:
    overrides = {
        "M": args.M,
        "N": args.N,
        "rho": args.rho,
        "Eu": args.Eu,
        "Nt": args.Nt,
        "seed": args.seed,
        "train_sigma2": args.train_sigma2,
        "ridge": args.ridge,
    }
    for name in ("snr", "methods", "ber_error_floor", "ber_bit_cap", "nmse_min_trials", "block_size"):
        val = getattr(args, name, None)
        if val is None:
            continue
        key = {"snr": "snr_grid_db"}.get(name, name)
        overrides[key] = val
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig().with_overrides(**overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elmfb", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="train once, then sweep SNR for each method")
    _add_config_args(p)
    p.add_argument("--snr", type=parse_snr_grid, help="start:step:stop or comma list (dB)")
    p.add_argument("--methods", type=_methods, help="comma list from {elm, baseline}")
    p.add_argument("--ber-error-floor", type=int, dest="ber_error_floor")
    p.add_argument("--ber-bit-cap", type=lambda s: int(float(s)), dest="ber_bit_cap")
    p.add_argument("--nmse-min-trials", type=int, dest="nmse_min_trials")
    p.add_argument("--block-size", type=int, dest="block_size")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, help="output file (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("overhead", help="closed-form overhead table")
    p.add_argument("--M", type=int, default=512)
    p.add_argument("--N", type=int, default=16)

    p = sub.add_parser("train", help="train a receiver and save it")
    _add_config_args(p)
    p.add_argument("--model", type=Path, required=True, help="output model file")

    p = sub.add_parser("infer", help="run a saved receiver on recorded signals")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--signals", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output .npz")

    p = sub.add_parser("signals", help="record simulated received signals to a file")
    p.add_argument("--M", type=int, default=512)
    p.add_argument("--N", type=int, default=16)
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--Eu", type=float, default=1.0)
    p.add_argument("--snr", type=float, default=float("inf"))
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--truth", type=Path, help="optional .npz with the true h and bits")
    return parser


def _cmd_sweep(args):
    cfg = _load_config(args)
    rows = run_sweep(cfg, workers=args.workers)
    if args.out is None:
        sys.stdout.write(format_results(rows, args.format))
    else:
        emit_results(rows, args.format, args.out)
        print(f"wrote {len(rows)} rows to {args.out}")


def _cmd_overhead(args):
    print(overhead_report(args.M, args.N).format_table())


def _cmd_train(args):
    cfg = _load_config(args)
    net = train_receiver(cfg)
    save_receiver(net, args.model)
    print(f"saved receiver (M={cfg.M}, N={cfg.N}, rho={cfg.rho}) to {args.model}")


def _cmd_infer(args):
    net = load_receiver(args.model)
    g, r = read_signals(args.signals)
    if r.shape[1:] != (net.P.N, net.P.M):
        raise FormatError(f"{args.signals}: signals are {r.shape[1]}x{r.shape[2]}, model expects {net.P.N}x{net.P.M}")
    xhat = np.stack([coarse_estimate(r[k], g[k]) for k in range(r.shape[0])], axis=1)
    h_tilde, d_tilde = infer(xhat, net)
    np.savez(args.out, h_tilde=h_tilde.T, d_tilde=d_tilde.T, bits=qpsk_demodulate(d_tilde).T)
    print(f"processed {r.shape[0]} signals -> {args.out}")


def _cmd_signals(args):
    cfg = ExperimentConfig(M=args.M, N=args.N, rho=args.rho, Eu=args.Eu, seed=args.seed)
    P = build_walsh(cfg.M, cfg.N)
    pw = PowerProfile(cfg.rho, cfg.Eu)
    sigma2 = snr_to_sigma2(args.snr, cfg.Eu)
    gs, rs, hs, bs = [], [], [], []
    for k in range(args.count):
        gen = RngStream(cfg.seed, (SIGNAL_STREAM, k)).generator()
        ch = draw_channel(gen, cfg.N, sigma2)
        bits = gen.integers(0, 2, size=2 * cfg.M, dtype=np.uint8)
        x = superimpose(ch.h, qpsk_modulate(bits), P, pw)
        rs.append(uplink_transmit(x, ch, gen))
        gs.append(ch.g)
        hs.append(ch.h)
        bs.append(bits)
    write_signals(args.out, np.array(gs), np.array(rs))
    if args.truth is not None:
        np.savez(args.truth, h=np.array(hs), bits=np.array(bs))
    print(f"wrote {args.count} signals to {args.out}")


_COMMANDS = {
    "sweep": _cmd_sweep,
    "overhead": _cmd_overhead,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "signals": _cmd_signals,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        _COMMANDS[args.command](args)
    except (ConfigError, FormatError, TrainingError, OSError, ValueError) as exc:
        print(f"elmfb {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
