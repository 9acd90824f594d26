"""Aggregate finished runs into a (controller, d_G) summary table."""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

METRICS = ("best_fd", "covered_modes", "final_d_D", "normalized_flops")
REPORT_FIELDS = ("controller", "d_G", "runs") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "std"))


def load_trailer(run_dir):
    """Return the trailer dict of a completed run, or None (with a warning) if unusable."""
    path = Path(run_dir) / "trailer.json"
    try:
        trailer = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        log.warning("skipping %s: unreadable trailer (%s)", run_dir, exc)
        return None
    if not isinstance(trailer, dict) or trailer.get("status") != "COMPLETED":
        log.warning("skipping %s: run not completed", run_dir)
        return None
    if any(trailer.get(m) is None for m in METRICS) or "controller" not in trailer:
        log.warning("skipping %s: trailer missing summary fields", run_dir)
        return None
    return trailer


def find_runs(paths):
    """Expand each path to the run directories beneath it (those holding a trailer.json)."""
    runs = []
    for p in map(Path, paths):
        if (p / "trailer.json").exists():
            runs.append(p)
        elif p.is_dir():
            found = sorted(q.parent for q in p.rglob("trailer.json"))
            if not found:
                log.warning("skipping %s: no runs found", p)
            runs.extend(found)
        else:
            log.warning("skipping %s: not a directory", p)
    return runs


def summarize(trailers):
    """Group trailers by (controller, d_G); mean and population std per metric."""
    groups = {}
    for t in trailers:
        groups.setdefault((t["controller"], float(t["d_G"])), []).append(t)
    rows = []
    for (controller, d_g), members in sorted(groups.items()):
        row = {"controller": controller, "d_G": d_g, "runs": len(members)}
        for m in METRICS:
            vals = np.array([float(t[m]) for t in members])
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_std"] = float(vals.std())
        rows.append(row)
    return rows


def format_table(rows) -> str:
    header = ["controller", "d_G", "runs", "best fd", "modes", "final d_D", "norm flops"]
    lines = []
    for r in rows:
        cells = [r["controller"], f"{r['d_G']:g}", str(r["runs"])]
        cells += [f"{r[m + '_mean']:.4g} ± {r[m + '_std']:.2g}" for m in METRICS]
        lines.append(cells)
    widths = [max(len(h), *(len(c[i]) for c in lines)) for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    out += ["  ".join(c.ljust(w) for c, w in zip(cells, widths)) for cells in lines]
    return "\n".join(out) + "\n"


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def write_report(run_dirs, out_csv=None):
    """Summarize run directories; returns (text table, csv text, rows).

    Corrupt, empty or failed runs are skipped with a warning.
    """
    trailers = [t for t in (load_trailer(d) for d in find_runs(run_dirs)) if t is not None]
    rows = summarize(trailers)
    text, table_csv = format_table(rows) if rows else "no completed runs\n", format_csv(rows)
    if out_csv is not None:
        Path(out_csv).write_text(table_csv, encoding="utf-8")
    return text, table_csv, rows
