"""Command-line entry point: ``simulate``, ``train`` and ``trace``."""

from __future__ import annotations

import argparse
import csv
import sys

from .harness import (ConfigError, format_summary, load_config, run_experiment, train_cli,
                      trace_rows)
from .fsnet import TrainConfig


def _simulate(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    result = run_experiment(cfg, args.out)
    print(format_summary(result.summary))
    print(f"wrote {len(result.records)} rows to {args.out}")
    return 0


def _train(args) -> int:
    cfg = load_config(args.config, require_detectors=False)
    tcfg = cfg.train or TrainConfig(n_t=cfg.n_t, n_r=cfg.n_r,
                                    constellation=cfg.constellation.kind.name)

    def report(epoch, value, lr):
        if not args.quiet and (epoch % 100 == 0 or epoch == tcfg.epochs - 1):
            print(f"epoch {epoch:6d}  loss {value:.6g}  lr {lr:.3g}", flush=True)

    train_cli(tcfg, args.out, args.loss_log, report)
    print(f"wrote weights to {args.out}")
    return 0


def _trace(args) -> int:
    cfg = load_config(args.config)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("snr_db", "detector", "trial", "index", "value"))
        for snr, det, trial, idx, val in trace_rows(cfg):
            w.writerow((f"{snr:g}", det, trial, idx, repr(val)))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimodet", description="MIMO detection experiments")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a Monte-Carlo experiment, write per-trial CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=_simulate)
    t = sub.add_parser("train", help="train FS-Net and write a weight file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--loss-log", default=None)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=_train)
    r = sub.add_parser("trace", help="emit search convergence traces as CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
