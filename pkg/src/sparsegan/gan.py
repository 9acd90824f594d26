"""Adversarial updates for masked generator/discriminator MLPs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import Mlp, MaskedParam, adam_step, mlp_backward, mlp_forward
from .errors import ConfigError, NonFiniteError

LOGIT_CLAMP = 30.0
WASSERSTEIN_CLIP = 0.05


class LossKind(str, enum.Enum):
    JS = "js"
    WASSERSTEIN = "wasserstein"
    HINGE = "hinge"


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class LossSpec:
    """Selects the adversarial terms f1 (real), f2 (fake) and g1 (generator).

    The discriminator emits a raw score. The JS variant squashes it with the
    logistic function, clamping logits to +-30 so ``log`` never sees 0.
    """

    kind: LossKind = LossKind.HINGE

    @classmethod
    def parse(cls, name) -> "LossSpec":
        try:
            return cls(LossKind(str(name).lower()))
        except ValueError:
            raise ConfigError(f"unknown loss {name!r}; expected one of {[k.value for k in LossKind]}") from None

    def f1(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind is LossKind.JS:
            return _softplus(-np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP))  # -log(sigmoid(x))
        if self.kind is LossKind.WASSERSTEIN:
            return -x
        return np.maximum(0.0, 1.0 - x)

    def f2(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind is LossKind.JS:
            return _softplus(np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP))  # -log(1 - sigmoid(x))
        if self.kind is LossKind.WASSERSTEIN:
            return x
        return np.maximum(0.0, 1.0 + x)

    def g1(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind is LossKind.JS:
            return -_softplus(np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP))  # log(1 - sigmoid(x))
        return -x

    # derivatives w.r.t. the raw score
    def df1(self, x):
        if self.kind is LossKind.JS:
            return _sigmoid(np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP)) - 1.0
        if self.kind is LossKind.WASSERSTEIN:
            return -np.ones_like(x)
        return -(x < 1.0).astype(np.float64)

    def df2(self, x):
        if self.kind is LossKind.JS:
            return _sigmoid(np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP))
        if self.kind is LossKind.WASSERSTEIN:
            return np.ones_like(x)
        return (x > -1.0).astype(np.float64)

    def dg1(self, x):
        if self.kind is LossKind.JS:
            return -_sigmoid(np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP))
        return -np.ones_like(x)


def _check_scores(*batches):
    for b in batches:
        if np.size(b) == 0:
            raise ConfigError("empty score batch")
        if not np.all(np.isfinite(b)):
            raise NonFiniteError("non-finite discriminator score")


def d_loss(spec: LossSpec, scores_real, scores_fake) -> float:
    _check_scores(scores_real, scores_fake)
    return float(np.mean(spec.f1(scores_real)) + np.mean(spec.f2(scores_fake)))


def g_loss(spec: LossSpec, scores_fake) -> float:
    _check_scores(scores_fake)
    return float(np.mean(spec.g1(scores_fake)))


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8


@dataclass
class GanPair:
    generator: Mlp
    discriminator: Mlp
    latent_dim: int = 2
    ema_beta: float = 0.999
    ema: list = field(default=None)  # [(weights, bias)] mirroring the generator

    def __post_init__(self):
        if self.generator.n_in != self.latent_dim:
            raise ConfigError(f"generator input {self.generator.n_in} != latent_dim {self.latent_dim}")
        if self.discriminator.n_in != self.generator.n_out or self.discriminator.n_out != 1:
            raise ConfigError("discriminator must map generator outputs to one score")
        if self.ema is None:
            self.ema = [(p.weights.copy(), p.bias.copy()) for p in self.generator.layers]

    def sample_latent(self, n, rng):
        return rng.standard_normal((n, self.latent_dim))

    def ema_generator(self) -> Mlp:
        """Generator network carrying the averaged weights (current masks)."""
        return Mlp([
            MaskedParam(w.copy(), b.copy(), p.mask.copy())
            for (w, b), p in zip(self.ema, self.generator.layers)
        ])


@dataclass
class DStepReport:
    loss_d: float
    mean_real: float
    mean_fake: float
    grads: list  # dense (dW, db) per D layer


@dataclass
class GStepReport:
    loss_g: float
    pre_scores: np.ndarray
    post_scores: np.ndarray
    grads: list  # dense (dW, db) per G layer


def _apply_adam(net: Mlp, grads, opt: AdamConfig):
    for p, (gw, gb) in zip(net.layers, grads):
        adam_step(p, gw, gb, opt.lr, opt.beta1, opt.beta2, opt.eps)


def discriminator_update(pair: GanPair, spec: LossSpec, real_batch, rng, opt: AdamConfig = AdamConfig()) -> DStepReport:
    """One discriminator step on ``real_batch`` against fresh fakes."""
    real = np.asarray(real_batch, dtype=np.float64)
    n = real.shape[0]
    if n == 0:
        raise ConfigError("empty real batch")
    fake = pair.generator(pair.sample_latent(n, rng))
    scores, cache = mlp_forward(pair.discriminator, np.concatenate([real, fake]))
    s_real, s_fake = scores[:n, 0], scores[n:, 0]
    loss = d_loss(spec, s_real, s_fake)
    grad = np.concatenate([spec.df1(s_real), spec.df2(s_fake)]) / n
    grads, _ = mlp_backward(pair.discriminator, cache, grad[:, None])
    _apply_adam(pair.discriminator, grads, opt)
    if spec.kind is LossKind.WASSERSTEIN:
        for p in pair.discriminator.layers:
            np.clip(p.weights, -WASSERSTEIN_CLIP, WASSERSTEIN_CLIP, out=p.weights)
    return DStepReport(loss, float(s_real.mean()), float(s_fake.mean()), grads)


def generator_update(pair: GanPair, spec: LossSpec, z_batch, opt: AdamConfig = AdamConfig()) -> GStepReport:
    """One generator step; scores the same ``z`` with the same D before and after."""
    z = np.asarray(z_batch, dtype=np.float64)
    if z.shape[0] == 0:
        raise ConfigError("empty latent batch")
    fake, g_cache = mlp_forward(pair.generator, z)
    scores, d_cache = mlp_forward(pair.discriminator, fake)
    pre = scores[:, 0]
    loss = g_loss(spec, pre)
    _, grad_fake = mlp_backward(pair.discriminator, d_cache, spec.dg1(scores) / z.shape[0], weight_grads=False)
    grads, _ = mlp_backward(pair.generator, g_cache, grad_fake)
    _apply_adam(pair.generator, grads, opt)
    post = pair.discriminator(pair.generator(z))[:, 0]
    _check_scores(post)
    return GStepReport(loss, pre, post, grads)


def ema_step(pair: GanPair):
    """``ema <- beta*ema + (1-beta)*live`` on active weights; 0 elsewhere."""
    b = pair.ema_beta
    updated = []
    for (ew, eb), p in zip(pair.ema, pair.generator.layers):
        ew = np.where(p.mask != 0, b * ew + (1.0 - b) * p.weights, 0.0)
        updated.append((ew, b * eb + (1.0 - b) * p.bias))
    pair.ema = updated


def zero_ema_inactive(pair: GanPair):
    """Forget the average of connections the generator just dropped."""
    pair.ema = [
        (np.where(p.mask != 0, ew, 0.0), eb) for (ew, eb), p in zip(pair.ema, pair.generator.layers)
    ]
