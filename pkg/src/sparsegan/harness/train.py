"""The training loop wiring GAN updates, DST timers, controllers and logging.

Output directory layout per run:

* ``log.csv``      one row per eval interval (plus the initial row at iter 0)
* ``events.csv``   every topology update and controller tick
* ``trailer.json`` run status and summary totals
* ``br_trace.csv`` every balance-ratio sample (only with ``eval.br_trace``)
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..balance import (
    DENSITY_CONTROLLED, GENERATOR_DST, BrWindow, ControllerKind, ControllerState, DiscDst,
    SetDiscDensity, balance_ratio, controller_tick,
)
from ..core import Mlp
from ..errors import NonFiniteError
from ..gan import AdamConfig, GanPair, LossSpec, discriminator_update, ema_step, generator_update, zero_ema_inactive
from ..metrics import (
    FlopsLedger, fit_gaussian, frechet_2d, layer_counts, mode_stats, normalized_flops, record_d_step, record_g_step,
)
from ..sparsity import (
    LayerShape, allocate_densities, dst_count, dst_step, init_masks, magnitude_prune, round_half_up, set_active_count,
)
from .data import DatasetSpec, make_streams, sample_dataset

log = logging.getLogger(__name__)

LOG_FIELDS = ("iter", "br", "br_avg", "d_D", "active_G", "active_D", "loss_d", "loss_g", "fd",
              "covered_modes", "hq_fraction", "flops", "wall_ms")
EVENT_FIELDS = ("iter", "component", "event", "k", "active_before", "active_after", "d_D", "br_avg")
POSTHOC_FINETUNE = 0.5


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def build_network(sizes, density, allocation, rng) -> Mlp:
    shapes = [LayerShape(n_in, n_out) for n_in, n_out in zip(sizes, sizes[1:])]
    masks = init_masks(allocate_densities(shapes, density, allocation), shapes, rng)
    return Mlp.init(sizes, rng, masks)


@dataclass
class RunResult:
    status: str
    final_row: dict
    trailer: dict
    out_dir: Path = None
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)


class Experiment:
    """Owns all state of one run. ``br_hook(t, sample)`` may override logged BR values."""

    def __init__(self, cfg, br_hook=None):
        self.cfg = cfg
        self.br_hook = br_hook
        self.rngs = make_streams(cfg.seed)
        self.data = DatasetSpec.from_config(cfg)
        self.centers = self.data.centers()
        self.loss = LossSpec.parse(cfg.loss)
        self.opt_g = AdamConfig(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.opt_d = AdamConfig(cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.kind = cfg.controller
        self.posthoc = self.kind is ControllerKind.POSTHOC

        g_density = 1.0 if self.posthoc else cfg.d_g
        init = self.rngs["init"]
        g = build_network([cfg.latent_dim, *cfg.g_hidden, 2], g_density, cfg.allocation, init)
        d = build_network([2, *cfg.d_hidden, 1], cfg.d_d_init, cfg.allocation, init)
        self.pair = GanPair(g, d, latent_dim=cfg.latent_dim, ema_beta=cfg.ema_beta)
        self.state = ControllerState(
            kind=self.kind, d_D=cfg.d_d_init, d_min=min(cfg.d_min, cfg.d_d_init),
            d_max=max(cfg.d_max, cfg.d_d_init), delta_d=cfg.delta_d,
            b_lo=cfg.b_lo, b_hi=cfg.b_hi, interval=cfg.dt_d,
        )
        self.window = BrWindow(cfg.window)
        self.ledger = FlopsLedger()
        self.real_ref = fit_gaussian(sample_dataset(self.data, cfg.eval_samples, self.rngs["eval"]))

        self.last_d_grads = None
        self.last_g_grads = None
        self.last_br = None
        self.loss_d = None
        self.loss_g = None
        self.rows = []
        self.events = []
        self.br_trace = []
        self.g_topology_updates = 0
        self.controller_ticks = 0

    @property
    def total_iterations(self) -> int:
        if self.posthoc:
            return self.cfg.iterations + int(round(POSTHOC_FINETUNE * self.cfg.iterations))
        return self.cfg.iterations

    # -- one iteration -------------------------------------------------
    def train_step(self, t: int):
        cfg, pair = self.cfg, self.pair
        g_layers = layer_counts(pair.generator)
        d_layers = layer_counts(pair.discriminator)
        baseline = t <= cfg.iterations
        for _ in range(cfg.n_dis):
            real = sample_dataset(self.data, cfg.batch_d, self.rngs["data"])
            rep = discriminator_update(pair, self.loss, real, self.rngs["latent"], self.opt_d)
            record_d_step(self.ledger, g_layers, d_layers, cfg.batch_d, baseline)
            self.loss_d = rep.loss_d
            self.last_d_grads = rep.grads

        z = pair.sample_latent(cfg.batch_g, self.rngs["latent"])
        grep = generator_update(pair, self.loss, z, self.opt_g)
        record_g_step(self.ledger, g_layers, d_layers, cfg.batch_g, baseline)
        self.loss_g = grep.loss_g
        self.last_g_grads = grep.grads

        if t % cfg.br_eval_interval == 0:
            real = sample_dataset(self.data, cfg.batch_g, self.rngs["data"])
            real_scores = pair.discriminator(real)[:, 0]
            sample = balance_ratio(real_scores, grep.pre_scores, grep.post_scores)
            br = sample.br
            if self.br_hook is not None:
                override = self.br_hook(t, sample)
                if override is not None:
                    br = float(override)
            self.window.push(br)
            self.last_br = br
            if cfg.br_trace:
                self.br_trace.append((t, sample.alpha, sample.beta, br))
            if t > 0.75 * cfg.iterations and t <= cfg.iterations and math.isfinite(br):
                self._final_quarter_br.append(br)

        ema_step(pair)
        self.topology_step(t)

    def _event(self, t, component, event, k, before, after, br_avg=None):
        self.events.append({
            "iter": t, "component": component, "event": event, "k": k, "active_before": before,
            "active_after": after, "d_D": self.state.d_D, "br_avg": br_avg,
        })

    def topology_step(self, t: int):
        cfg, pair, kind = self.cfg, self.pair, self.kind
        D, G = pair.discriminator, pair.generator
        T = cfg.iterations
        dst_rng = self.rngs["dst"]

        if kind in DENSITY_CONTROLLED and t % cfg.dt_d == 0:
            self.controller_ticks += 1
            br_avg = self.window.average()
            action = controller_tick(t, kind, br_avg, self.state)
            before = D.active_count
            if isinstance(action, SetDiscDensity):
                self.state.d_D = action.density
                target = round_half_up(action.density * D.size)
                set_active_count(D.layers, self.last_d_grads, target, cfg.grow_mode, dst_rng)
                self._event(t, "D", "set_density", abs(target - before), before, D.active_count, br_avg)
            elif isinstance(action, DiscDst):
                k = dst_count(cfg.gamma, t, T, D.size, self.state.d_D)
                delta = dst_step(D.layers, self.last_d_grads, k, cfg.grow_mode, dst_rng)
                self._event(t, "D", "disc_dst", len(delta.dropped), before, D.active_count, br_avg)
            else:
                self._event(t, "D", "noop", 0, before, before, br_avg)

        if kind is ControllerKind.DST_BOTH and t % cfg.dt_d == 0:
            before = D.active_count
            k = dst_count(cfg.gamma, t, T, D.size, self.state.d_D)
            delta = dst_step(D.layers, self.last_d_grads, k, cfg.grow_mode, dst_rng)
            self._event(t, "D", "d_dst", len(delta.dropped), before, D.active_count)

        if kind in GENERATOR_DST and t % cfg.dt_g == 0:
            self.g_topology_updates += 1
            before = G.active_count
            k = dst_count(cfg.gamma, t, T, G.size, cfg.d_g)
            delta = dst_step(G.layers, self.last_g_grads, k, cfg.grow_mode, dst_rng)
            zero_ema_inactive(pair)
            self._event(t, "G", "g_dst", len(delta.dropped), before, G.active_count)

        if self.posthoc and t == T:
            before = G.active_count
            magnitude_prune(G.layers, cfg.d_g)
            zero_ema_inactive(pair)
            self._event(t, "G", "prune", before - G.active_count, before, G.active_count)

    # -- evaluation and logging ----------------------------------------
    def evaluate(self, t: int, started: float) -> dict:
        cfg, pair = self.cfg, self.pair
        z = pair.sample_latent(cfg.eval_samples, self.rngs["eval"])
        fakes = pair.ema_generator()(z)
        if not np.all(np.isfinite(fakes)):
            raise NonFiniteError(f"non-finite generator output at iteration {t}")
        fd = frechet_2d(fit_gaussian(fakes), self.real_ref)
        covered, hq = mode_stats(fakes, self.centers, self.data.sigma)
        wall = int((time.perf_counter() - started) * 1000) if cfg.log_wall_time else 0
        return {
            "iter": t, "br": self.last_br, "br_avg": self.window.average(), "d_D": self.state.d_D,
            "active_G": pair.generator.active_count, "active_D": pair.discriminator.active_count,
            "loss_d": self.loss_d, "loss_g": self.loss_g, "fd": fd, "covered_modes": covered,
            "hq_fraction": hq, "flops": self.ledger.total, "wall_ms": wall,
        }

    def run(self, out_dir=None) -> RunResult:
        cfg = self.cfg
        out = Path(out_dir) if out_dir is not None else (Path(cfg.out) if cfg.out else None)
        self._final_quarter_br = []
        started = time.perf_counter()
        status, error = "COMPLETED", None
        writer = _LogWriter(out) if out is not None else None
        t = 0
        try:
            row = self.evaluate(0, started)
            self._emit(row, writer)
            for t in range(1, self.total_iterations + 1):
                self.train_step(t)
                if t % cfg.eval_interval == 0 or t == self.total_iterations:
                    self._emit(self.evaluate(t, started), writer)
        except NonFiniteError as exc:
            status, error = "FAILED", str(exc)
            log.error("run failed at iteration %d: %s", t, exc)
        finally:
            if writer is not None:
                writer.write_events(self.events)
                if cfg.br_trace:
                    writer.write_br_trace(self.br_trace)
                writer.close()

        trailer = self.trailer(status, error, t, time.perf_counter() - started)
        if out is not None:
            (out / "trailer.json").write_text(json.dumps(trailer, indent=2, sort_keys=True) + "\n")
        final = self.rows[-1] if self.rows else {}
        return RunResult(status, final, trailer, out, self.rows, self.events)

    def _emit(self, row, writer):
        self.rows.append(row)
        if writer is not None:
            writer.write_row(row)

    def trailer(self, status, error, t, wall_seconds) -> dict:
        fds = [r["fd"] for r in self.rows if r["fd"] is not None]
        last = self.rows[-1] if self.rows else {}
        brs = self._final_quarter_br
        try:
            norm = normalized_flops(self.ledger)
        except Exception:
            norm = None
        return {
            "status": status,
            "error": error,
            "iterations_completed": t if status == "COMPLETED" else t - 1,
            "controller": self.kind.value,
            "d_G": self.cfg.d_g,
            "seed": self.cfg.seed,
            "final_d_D": self.state.d_D,
            "active_G": self.pair.generator.active_count,
            "active_D": self.pair.discriminator.active_count,
            "best_fd": min(fds) if fds else None,
            "final_fd": last.get("fd"),
            "covered_modes": last.get("covered_modes"),
            "hq_fraction": last.get("hq_fraction"),
            "flops": {
                "forward": dict(self.ledger.forward), "backward": dict(self.ledger.backward),
                "total": self.ledger.total, "dense_total": self.ledger.dense_total,
            },
            "normalized_flops": norm,
            "g_topology_updates": self.g_topology_updates,
            "controller_ticks": self.controller_ticks,
            "br_std_final_quarter": float(np.std(brs)) if brs else None,
            "br_mean_final_quarter": float(np.mean(brs)) if brs else None,
            "wall_seconds": wall_seconds,
            "config": self.cfg.to_dict(),
        }


class _LogWriter:
    def __init__(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        self.out = out
        self._fh = open(out / "log.csv", "w", newline="", encoding="utf-8")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(LOG_FIELDS)

    def write_row(self, row):
        self._csv.writerow([_fmt(row[k]) for k in LOG_FIELDS])
        self._fh.flush()

    def write_events(self, events):
        with open(self.out / "events.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVENT_FIELDS)
            for e in events:
                w.writerow([_fmt(e[k]) if not isinstance(e[k], str) else e[k] for k in EVENT_FIELDS])

    def write_br_trace(self, trace):
        with open(self.out / "br_trace.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iter", "alpha", "beta", "br"))
            for t, a, b, br in trace:
                w.writerow([t, _fmt(a), _fmt(b), _fmt(br)])

    def close(self):
        self._fh.close()


def run_experiment(cfg, out_dir=None, br_hook=None) -> RunResult:
    """Train one configuration end to end; writes logs when an output dir is set."""
    return Experiment(cfg, br_hook=br_hook).run(out_dir)
