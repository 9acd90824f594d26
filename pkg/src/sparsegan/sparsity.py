"""Density allocation, random mask init and global magnitude-drop / grow.

All selections are global across the layers of one network. Ties in
magnitude (or gradient) are broken by ``(layer, row, col)`` order, which is
the order of the concatenated C-flattened layer arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import apply_mask_change
from .errors import ConfigError

log = logging.getLogger(__name__)

ALLOCATION_MODES = ("uniform", "ER", "ERK")
GROW_MODES = ("random", "gradient")


def round_half_up(x: float) -> int:
    """Nearest integer, halves rounded up (not banker's rounding)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LayerShape:
    n_in: int
    n_out: int
    kernel_w: int = 1
    kernel_h: int = 1

    def __post_init__(self):
        if min(self.n_in, self.n_out, self.kernel_w, self.kernel_h) < 1:
            raise ConfigError(f"layer dimensions must be >= 1, got {self}")

    @property
    def size(self) -> int:
        return self.n_in * self.n_out * self.kernel_w * self.kernel_h

    @property
    def mask_shape(self) -> tuple:
        if self.kernel_w == 1 and self.kernel_h == 1:
            return (self.n_out, self.n_in)
        return (self.n_out, self.n_in, self.kernel_h, self.kernel_w)


@dataclass
class DensityAllocation:
    densities: list  # continuous per-layer densities
    counts: list  # integer active counts actually used
    target: float

    @property
    def total_active(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class UpdateSchedule:
    gamma: float = 0.5
    interval: int = 500
    total: int = 20000

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.interval < 1:
            raise ConfigError(f"update interval must be >= 1, got {self.interval}")


def raw_factor(shape: LayerShape, mode: str) -> float:
    """Unnormalised Erdos-Renyi(-Kernel) density factor of one layer."""
    if mode == "ER":
        return (shape.n_in + shape.n_out) / (shape.n_in * shape.n_out)
    if mode == "ERK":
        return (shape.n_in + shape.n_out + shape.kernel_w + shape.kernel_h) / shape.size
    if mode == "uniform":
        return 1.0
    raise ConfigError(f"unknown allocation mode {mode!r}; expected one of {ALLOCATION_MODES}")


def allocate_densities(shapes, d: float, mode: str = "ER") -> DensityAllocation:
    """Split a global density ``d`` over layers.

    Densities are proportional to the raw ER/ERK factor, layers that would
    exceed 1 are capped and the scale re-solved over the rest. Integer counts
    are rounded per layer and the global remainder is put on the largest
    uncapped layer so that ``sum(counts) == round(d * total)``.
    """
    shapes = list(shapes)
    if not shapes:
        raise ConfigError("no layers to allocate")
    if not 0.0 < d <= 1.0:
        raise ConfigError(f"density must lie in (0, 1], got {d}")
    sizes = [s.size for s in shapes]
    total = sum(sizes)
    target = round_half_up(d * total)

    if mode == "uniform" or len(shapes) == 1:
        raw_factor(shapes[0], mode)  # validates the mode name
        densities = [d] * len(shapes)
        capped = set()
    else:
        raw = [raw_factor(s, mode) for s in shapes]
        capped = set()
        while True:
            free = [i for i in range(len(shapes)) if i not in capped]
            if not free:
                raise ConfigError(f"density {d} unreachable: every layer is already dense")
            budget = d * total - sum(sizes[i] for i in capped)
            scale = budget / sum(raw[i] * sizes[i] for i in free)
            over = [i for i in free if scale * raw[i] > 1.0]
            if not over:
                break
            capped.update(over)
        densities = [1.0 if i in capped else scale * raw[i] for i in range(len(shapes))]

    counts = [min(sizes[i], round_half_up(densities[i] * sizes[i])) for i in range(len(shapes))]
    remainder = target - sum(counts)
    # largest uncapped layers absorb the rounding remainder, in size order
    order = sorted(range(len(shapes)), key=lambda i: (i in capped, -sizes[i], i))
    for i in order:
        if remainder == 0:
            break
        room = sizes[i] - counts[i] if remainder > 0 else -counts[i]
        delta = min(remainder, room) if remainder > 0 else max(remainder, room)
        counts[i] += delta
        remainder -= delta
    if remainder != 0:
        raise ConfigError(f"cannot place {target} active weights in {total} parameters")
    return DensityAllocation(densities=densities, counts=counts, target=d)


def init_masks(alloc: DensityAllocation, shapes, rng) -> list:
    """One 0/1 mask per layer with exactly the allocated number of ones."""
    masks = []
    for shape, count in zip(shapes, alloc.counts):
        flat = np.zeros(shape.size)
        flat[rng.choice(shape.size, size=count, replace=False)] = 1.0
        masks.append(flat.reshape(shape.mask_shape))
    return masks


def decay_fraction(gamma: float, t: float, T: float) -> float:
    """Cosine-annealed update fraction: gamma at t=0, 0 at t=T."""
    if not 0 <= t <= T:
        raise ConfigError(f"t={t} outside [0, {T}]")
    return gamma / 2.0 * (1.0 + math.cos(math.pi * t / T))


def dst_count(gamma: float, t: int, T: int, n_params: int, density: float) -> int:
    """Number of connections dropped (and regrown) by one topology update."""
    return round_half_up(decay_fraction(gamma, t, T) * n_params * density)


@dataclass
class MaskDelta:
    """Positions changed by one topology update, as ``(layer, row, col)`` triples."""

    dropped: list = field(default_factory=list)
    grown: list = field(default_factory=list)


def _flatten(params):
    sizes = [p.size for p in params]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    mask = np.concatenate([p.mask.ravel() for p in params]) != 0
    weights = np.concatenate([p.weights.ravel() for p in params])
    return mask, weights, offsets


def _unflatten(indices, params, offsets):
    out = []
    for g in np.sort(np.asarray(indices, dtype=np.int64)):
        layer = int(np.searchsorted(offsets, g, side="right") - 1)
        row, col = divmod(int(g - offsets[layer]), params[layer].n_in)
        out.append((layer, row, col))
    return out


def _smallest_magnitude(candidates, weights, k):
    # stable sort keeps ascending global index among equal magnitudes
    order = np.argsort(np.abs(weights[candidates]), kind="stable")
    return candidates[order[:k]]


def _select_growth(candidates, dense_grads, k, grow_mode, rng):
    if k == 0:
        return candidates[:0]
    if grow_mode == "gradient":
        if dense_grads is None:
            raise ConfigError("gradient growth needs dense gradients")
        g = np.concatenate([np.asarray(dg, dtype=np.float64).ravel() for dg in dense_grads])
        order = np.argsort(-np.abs(g[candidates]), kind="stable")
        return candidates[order[:k]]
    if grow_mode == "random":
        return rng.choice(candidates, size=k, replace=False)
    raise ConfigError(f"unknown grow mode {grow_mode!r}; expected one of {GROW_MODES}")


def _install(params, new_flat, offsets):
    for i, p in enumerate(params):
        new = new_flat[offsets[i]:offsets[i + 1]].reshape(p.mask.shape)
        apply_mask_change(p, new, declared_active=int(np.count_nonzero(new)))


def _weight_grads(dense_grads):
    # accept either plain arrays or the (dW, db) pairs returned by mlp_backward
    if dense_grads is None:
        return None
    return [g[0] if isinstance(g, tuple) else g for g in dense_grads]


def dst_step(params, dense_grads, k: int, grow_mode: str, rng) -> MaskDelta:
    """Drop the ``k`` smallest-magnitude active weights and grow ``k`` new ones.

    Growth candidates are the positions inactive *before* the drop, so a
    position cannot be dropped and regrown in the same step.
    """
    params = list(params)
    mask, weights, offsets = _flatten(params)
    active = np.flatnonzero(mask)
    inactive = np.flatnonzero(~mask)
    feasible = min(len(active), len(inactive))
    if k < 0 or k > feasible:
        log.warning("dst_step: k=%d infeasible, clamped to %d", k, max(0, min(k, feasible)))
        k = max(0, min(k, feasible))
    if k == 0:
        return MaskDelta()
    dropped = _smallest_magnitude(active, weights, k)
    grown = _select_growth(inactive, _weight_grads(dense_grads), k, grow_mode, rng)
    new = mask.copy()
    new[dropped] = False
    new[grown] = True
    _install(params, new, offsets)
    return MaskDelta(_unflatten(dropped, params, offsets), _unflatten(grown, params, offsets))


def set_active_count(params, dense_grads, new_total: int, grow_mode: str, rng) -> MaskDelta:
    """Grow or shrink the network to exactly ``new_total`` active weights."""
    params = list(params)
    mask, weights, offsets = _flatten(params)
    if new_total <= 0:
        raise ConfigError("active count must stay positive (degenerate network)")
    if new_total > mask.size:
        raise ConfigError(f"active count {new_total} exceeds parameter count {mask.size}")
    current = int(mask.sum())
    new = mask.copy()
    delta = MaskDelta()
    if new_total > current:
        grown = _select_growth(np.flatnonzero(~mask), _weight_grads(dense_grads), new_total - current, grow_mode, rng)
        new[grown] = True
        delta.grown = _unflatten(grown, params, offsets)
    elif new_total < current:
        dropped = _smallest_magnitude(np.flatnonzero(mask), weights, current - new_total)
        new[dropped] = False
        delta.dropped = _unflatten(dropped, params, offsets)
    else:
        return delta
    _install(params, new, offsets)
    return delta


def magnitude_prune(params, density: float) -> MaskDelta:
    """One-shot global magnitude pruning down to ``round(density * size)`` weights."""
    total = sum(p.size for p in params)
    return set_active_count(params, None, round_half_up(density * total), "gradient", None)
