"""Pilot runs on the 8-ring (d_G=0.3, seed 1, T=20000, calibrated defaults).

Writes pilots.json next to this file. The acceptance suite re-runs the same
configurations and checks them against the thresholds recorded here.

    python3 pilots/run_pilots.py [--iterations 20000] [--out pilots/pilots.json]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from sparsegan.harness.config import ExperimentConfig
from sparsegan.harness.train import run_experiment

PILOTS = {
    "dense": dict(controller="STATIC", d_g=1.0, d_d_init=1.0),
    "static_d005": dict(controller="STATIC", d_g=0.3, d_d_init=0.05),
    "static_d030": dict(controller="STATIC", d_g=0.3, d_d_init=0.3),
    "adapt_relax": dict(controller="ADAPT_RELAX", d_g=0.3),
    "sdst_strong": dict(controller="SDST", d_g=0.3, strategy="strong"),
}


def pilot_config(name, iterations=20000, seed=1):
    return ExperimentConfig(dataset="ring", iterations=iterations, seed=seed, **PILOTS[name])


def in_band_fraction(events, cfg, margin=0.10, warmup=0.25):
    """Share of controller ticks after the warmup whose window BR lies in the widened band."""
    ticks = [e for e in events if e["component"] == "D" and e["iter"] > warmup * cfg.iterations]
    if not ticks:
        return None
    lo, hi = cfg.b_lo - margin, cfg.b_hi + margin
    ok = [e["br_avg"] is not None and lo <= e["br_avg"] <= hi for e in ticks]
    return sum(ok) / len(ok)


def summarize(res, cfg):
    fds = [r["fd"] for r in res.rows]
    tr = res.trailer
    return {
        "status": res.status,
        "covered_modes": res.final_row["covered_modes"],
        "hq_fraction": res.final_row["hq_fraction"],
        "median_last10_fd": float(np.median(fds[-10:])),
        "br_std_final_quarter": tr["br_std_final_quarter"],
        "br_mean_final_quarter": tr["br_mean_final_quarter"],
        "final_d_D": tr["final_d_D"],
        "normalized_flops": tr["normalized_flops"],
        "in_band_fraction": in_band_fraction(res.events, cfg) if cfg.controller.value.startswith("ADAPT") else None,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=20000)
    ap.add_argument("--out", default=str(Path(__file__).with_name("pilots.json")))
    args = ap.parse_args()
    out = {"iterations": args.iterations, "seed": 1, "runs": {}}
    for name in PILOTS:
        cfg = pilot_config(name, args.iterations)
        started = time.time()
        summary = summarize(run_experiment(cfg), cfg)
        summary["seconds"] = round(time.time() - started, 1)
        out["runs"][name] = summary
        print(name, summary, flush=True)
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
