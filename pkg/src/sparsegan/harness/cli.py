"""Command line entry point: train, sweep and report.

Exit codes: 0 success, 2 configuration error, 3 a run finished FAILED.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..errors import ConfigError
from .config import load_config
from .report import write_report
from .train import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 2, 3


def _run_one(cfg, out_dir):
    res = run_experiment(cfg, out_dir)
    return res.status, res.trailer


def _summary_line(trailer) -> str:
    fd = trailer.get("best_fd")
    fd = "n/a" if fd is None else f"{fd:.4g}"
    return (f"{trailer['status']}: controller={trailer['controller']} seed={trailer['seed']} "
            f"best_fd={fd} modes={trailer.get('covered_modes')} final_d_D={trailer['final_d_D']:g} "
            f"norm_flops={trailer.get('normalized_flops')}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if changes:
        cfg = cfg.replace(**changes)
    out = cfg.out or f"runs/{cfg.controller.value.lower()}_seed{cfg.seed}"
    status, trailer = _run_one(cfg, out)
    print(_summary_line(trailer))
    print(f"logs written to {out}")
    return EXIT_OK if status == "COMPLETED" else EXIT_FAILED


def _parse_seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma separated list of integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seeds = _parse_seeds(args.seeds)
    root = Path(args.out or cfg.out or "runs/sweep")
    jobs = [(cfg.replace(seed=s), root / f"seed_{s}") for s in seeds]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(c, o) for c, o in jobs]
    for _, trailer in results:
        print(_summary_line(trailer))
    text, _, _ = write_report([o for _, o in jobs], out_csv=root / "report.csv")
    print(text, end="")
    return EXIT_OK if all(s == "COMPLETED" for s, _ in results) else EXIT_FAILED


def cmd_report(args) -> int:
    text, table_csv, _ = write_report(args.dirs, out_csv=args.csv)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsegan", description="Balanced dynamic sparse GAN training lab")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment")
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory for logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run one config over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", required=True, help="comma separated, e.g. 1,2,3")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.add_argument("--out", default=None, help="root directory; runs go to seed_<n>/")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize finished runs")
    p.add_argument("dirs", nargs="+", help="run directories or roots containing them")
    p.add_argument("--csv", default=None, help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
