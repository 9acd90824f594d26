"""Sample-quality metrics for 2D toy data and the training FLOPs ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray


def fit_gaussian(samples) -> GaussianSummary:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("fit_gaussian needs at least 2 samples")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / x.shape[0]
    return GaussianSummary(mean, 0.5 * (cov + cov.T))


def _trace_sqrt_2x2(c):
    # for a 2x2 matrix with non-negative real eigenvalues: tr sqrt(C) = sqrt(tr C + 2 sqrt(det C))
    det = max(float(np.linalg.det(c)), 0.0)
    return math.sqrt(max(float(np.trace(c)) + 2.0 * math.sqrt(det), 0.0))


def frechet_2d(a: GaussianSummary, b: GaussianSummary) -> float:
    """Squared Frechet (2-Wasserstein) distance between two 2D Gaussians."""
    diff = np.asarray(a.mean) - np.asarray(b.mean)
    value = (diff @ diff + np.trace(a.cov) + np.trace(b.cov)
             - 2.0 * _trace_sqrt_2x2(np.asarray(a.cov) @ np.asarray(b.cov)))
    return max(float(value), 0.0)


def mode_stats(samples, centers, sigma):
    """Count covered modes and the fraction of samples within 3 sigma of a center.

    A mode counts as covered once it is the nearest center of at least
    ``max(20, N / (10 K))`` high-quality samples.
    """
    x = np.asarray(samples, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    if x.size == 0 or c.size == 0:
        raise ConfigError("mode_stats needs samples and centers")
    d2 = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)
    nearest = d2.argmin(axis=1)
    good = np.sqrt(d2[np.arange(len(x)), nearest]) <= 3.0 * sigma
    counts = np.bincount(nearest[good], minlength=len(c))
    need = max(20.0, len(x) / (10.0 * len(c)))
    return int((counts >= need).sum()), float(good.mean())


@dataclass
class FlopsLedger:
    """Cumulative training FLOPs per component, next to the dense baseline.

    A multiply-add counts as 2 FLOPs, a layer's bias add as ``n_out`` per
    sample, and a backward pass as twice the forward pass of the layers it
    traverses. Optimizer and activation costs are ignored.
    """

    forward: dict = field(default_factory=lambda: {"G": 0, "D": 0})
    backward: dict = field(default_factory=lambda: {"G": 0, "D": 0})
    dense_forward: dict = field(default_factory=lambda: {"G": 0, "D": 0})
    dense_backward: dict = field(default_factory=lambda: {"G": 0, "D": 0})

    @property
    def total(self) -> int:
        return sum(self.forward.values()) + sum(self.backward.values())

    @property
    def dense_total(self) -> int:
        return sum(self.dense_forward.values()) + sum(self.dense_backward.values())


def layer_counts(net):
    """``[(active, size, n_out)]`` for each layer of an Mlp."""
    return [(p.active_count, p.size, p.n_out) for p in net.layers]


def forward_flops(layers, batch: int, dense: bool = False) -> int:
    return sum((2 * (size if dense else active) + n_out) * batch for active, size, n_out in layers)


def record_flops(ledger: FlopsLedger, component: str, layers, batch: int, direction: str, baseline: bool = True):
    """Add one pass over ``layers`` (see ``layer_counts``) to the ledger."""
    if direction not in ("forward", "backward"):
        raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")
    factor = 1 if direction == "forward" else 2
    getattr(ledger, direction)[component] += factor * forward_flops(layers, batch)
    if baseline:
        getattr(ledger, "dense_" + direction)[component] += factor * forward_flops(layers, batch, dense=True)


def record_d_step(ledger, g_layers, d_layers, batch: int, baseline=True):
    # fakes are generated for the batch, then D scores real and fake samples
    record_flops(ledger, "G", g_layers, batch, "forward", baseline)
    record_flops(ledger, "D", d_layers, 2 * batch, "forward", baseline)
    record_flops(ledger, "D", d_layers, 2 * batch, "backward", baseline)


def record_g_step(ledger, g_layers, d_layers, batch: int, baseline=True):
    record_flops(ledger, "G", g_layers, batch, "forward", baseline)
    record_flops(ledger, "D", d_layers, batch, "forward", baseline)
    record_flops(ledger, "D", d_layers, batch, "backward", baseline)
    record_flops(ledger, "G", g_layers, batch, "backward", baseline)


def normalized_flops(ledger: FlopsLedger) -> float:
    if ledger.dense_total <= 0:
        raise ConfigError("dense baseline is zero; nothing recorded")
    return ledger.total / ledger.dense_total
