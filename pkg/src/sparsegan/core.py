"""Masked multilayer perceptron with exact dense gradients and a masked Adam.

Weights are stored as float64 ``(n_out, n_in)`` arrays next to a 0/1 mask of
the same shape. The forward pass always uses ``weights * mask``; the backward
pass returns the gradient with respect to that effective weight at *every*
position, so inactive connections can be scored for regrowth.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InternalError, NonFiniteError


@dataclass
class MaskedParam:
    """One fully connected layer: weights, bias, binary mask and Adam state."""

    weights: np.ndarray
    bias: np.ndarray
    mask: np.ndarray
    moment1: np.ndarray = None
    moment2: np.ndarray = None
    bias_moment1: np.ndarray = None
    bias_moment2: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        self.mask = (np.asarray(self.mask) != 0).astype(np.float64)
        if self.weights.ndim != 2 or self.mask.shape != self.weights.shape:
            raise ConfigError(
                f"weights {self.weights.shape} and mask {self.mask.shape} must be equal 2-D shapes"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise ConfigError(f"bias length {self.bias.shape[0]} != n_out {self.weights.shape[0]}")
        self.weights = np.where(self.mask != 0, self.weights, 0.0)
        for name in ("moment1", "moment2"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.weights))
        for name in ("bias_moment1", "bias_moment2"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.bias))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    def effective_weights(self) -> np.ndarray:
        return self.weights * self.mask


@dataclass
class Mlp:
    """Rectifier hidden layers, identity output."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.n_in != prev.n_out:
                raise ConfigError(f"layer shapes do not compose: {prev.n_out} -> {nxt.n_in}")

    @classmethod
    def init(cls, sizes, rng, masks=None) -> "Mlp":
        """Uniform(+-1/sqrt(fan_in)) init for ``sizes = [n_in, h1, ..., n_out]``."""
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
            m = np.ones((n_out, n_in)) if masks is None else masks[i]
            layers.append(MaskedParam(w, b, m))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def size(self) -> int:
        return sum(p.size for p in self.layers)

    @property
    def active_count(self) -> int:
        return sum(p.active_count for p in self.layers)

    @property
    def density(self) -> float:
        return self.active_count / self.size

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def __call__(self, x):
        return mlp_forward(self, x)[0]


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    shapes: list = field(default_factory=list)

    def __len__(self):
        return len(self.inputs)


def mlp_forward(net: Mlp, x):
    """Returns ``(y, cache)``; hidden layers are rectified, the last is linear."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.n_in:
        raise ConfigError(f"input shape {h.shape} does not match n_in={net.n_in}")
    cache = ForwardCache()
    last = len(net.layers) - 1
    for i, p in enumerate(net.layers):
        cache.inputs.append(h)
        cache.shapes.append(p.weights.shape)
        z = h @ p.effective_weights().T + p.bias
        cache.preacts.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h, cache


def mlp_backward(net: Mlp, cache: ForwardCache, grad_y, weight_grads=True):
    """Backpropagate ``grad_y`` (dL/dy for the whole batch).

    Returns ``(grads, grad_x)`` where ``grads[l] = (dW, db)`` and ``dW`` is the
    unmasked gradient with respect to the effective weight ``W * M``. With
    ``weight_grads=False`` only ``grad_x`` is computed and ``grads`` is None.
    """
    if len(cache) != len(net.layers) or any(
        s != p.weights.shape for s, p in zip(cache.shapes, net.layers)
    ):
        raise InternalError("forward cache does not belong to this network")
    delta = np.asarray(grad_y, dtype=np.float64)
    if delta.shape != cache.preacts[-1].shape:
        raise InternalError(f"grad_y shape {delta.shape} != output shape {cache.preacts[-1].shape}")
    grads = [None] * len(net.layers) if weight_grads else None
    for i in range(len(net.layers) - 1, -1, -1):
        p = net.layers[i]
        if i < len(net.layers) - 1:
            delta = delta * (cache.preacts[i] > 0.0)
        if weight_grads:
            grads[i] = (delta.T @ cache.inputs[i], delta.sum(axis=0))
        delta = delta @ p.effective_weights()
    return grads, delta


def adam_step(param: MaskedParam, dense_grad, bias_grad=None, lr=2e-4, beta1=0.0, beta2=0.9, eps=1e-8):
    """Bias-corrected Adam on the active weights (and the dense bias).

    Inactive positions keep exactly +0.0 in the weights and both moments.
    """
    g = np.asarray(dense_grad, dtype=np.float64)
    if g.shape != param.weights.shape:
        raise ConfigError(f"gradient shape {g.shape} != weight shape {param.weights.shape}")
    if not np.all(np.isfinite(g)) or (bias_grad is not None and not np.all(np.isfinite(bias_grad))):
        raise NonFiniteError(f"non-finite gradient at optimizer step {param.step + 1}")
    active = param.mask != 0
    param.step += 1
    c1 = 1.0 - beta1 ** param.step
    c2 = 1.0 - beta2 ** param.step

    param.moment1 = np.where(active, beta1 * param.moment1 + (1.0 - beta1) * g, 0.0)
    param.moment2 = np.where(active, beta2 * param.moment2 + (1.0 - beta2) * g * g, 0.0)
    update = lr * (param.moment1 / c1) / (np.sqrt(param.moment2 / c2) + eps)
    param.weights = np.where(active, param.weights - update, 0.0)

    if bias_grad is not None:
        gb = np.asarray(bias_grad, dtype=np.float64)
        param.bias_moment1 = beta1 * param.bias_moment1 + (1.0 - beta1) * gb
        param.bias_moment2 = beta2 * param.bias_moment2 + (1.0 - beta2) * gb * gb
        param.bias = param.bias - lr * (param.bias_moment1 / c1) / (np.sqrt(param.bias_moment2 / c2) + eps)


def apply_mask_change(param: MaskedParam, new_mask, declared_active=None):
    """Install ``new_mask``; every position whose state flips gets zero weight and moments."""
    new = (np.asarray(new_mask) != 0).astype(np.float64)
    if new.shape != param.mask.shape:
        raise ConfigError(f"mask shape {new.shape} != {param.mask.shape}")
    if declared_active is not None and int(np.count_nonzero(new)) != declared_active:
        raise InternalError(
            f"declared active count {declared_active} != mask popcount {int(np.count_nonzero(new))}"
        )
    changed = new != param.mask
    if not changed.any():
        return
    param.weights = np.where(changed, 0.0, param.weights)
    param.moment1 = np.where(changed, 0.0, param.moment1)
    param.moment2 = np.where(changed, 0.0, param.moment2)
    param.mask = new
