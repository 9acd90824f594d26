"""Balance ratio between generator and discriminator, and the density controllers.

The balance ratio compares how far one generator step moves the
discriminator's score on fixed noise (alpha) with the current real/fake score
gap (beta). Controllers read its windowed average at fixed intervals and
raise or lower the discriminator density.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BETA_EPS = 1e-8
DENSITY_DECIMALS = 12


class ControllerKind(str, enum.Enum):
    STATIC = "STATIC"
    SDST = "SDST"
    DST_BOTH = "DST_BOTH"
    DDA_STATIC = "DDA_STATIC"
    ADAPT_RELAX = "ADAPT_RELAX"
    ADAPT_STRICT = "ADAPT_STRICT"
    POSTHOC = "POSTHOC"

    @classmethod
    def parse(cls, name) -> "ControllerKind":
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ConfigError(f"unknown controller {name!r}; expected one of {[k.value for k in cls]}") from None


# controllers whose generator runs drop/grow on its own timer
GENERATOR_DST = frozenset({ControllerKind.SDST, ControllerKind.DST_BOTH,
                           ControllerKind.ADAPT_RELAX, ControllerKind.ADAPT_STRICT})
DENSITY_CONTROLLED = frozenset({ControllerKind.DDA_STATIC, ControllerKind.ADAPT_RELAX,
                                ControllerKind.ADAPT_STRICT})


@dataclass(frozen=True)
class BrSample:
    alpha: float
    beta: float
    br: float  # nan when degenerate

    @property
    def degenerate(self) -> bool:
        return not np.isfinite(self.br)


def balance_ratio(real_scores, fake_pre_scores, fake_post_scores, eps=BETA_EPS) -> BrSample:
    """``(E[D(G_post z)] - E[D(G_pre z)]) / (E[D(x_r)] - E[D(G_pre z)])``."""
    for b in (real_scores, fake_pre_scores, fake_post_scores):
        if np.size(b) == 0:
            raise ConfigError("balance ratio needs non-empty score batches")
    pre = float(np.mean(fake_pre_scores))
    alpha = float(np.mean(fake_post_scores)) - pre
    beta = float(np.mean(real_scores)) - pre
    br = alpha / beta if abs(beta) > eps else float("nan")
    return BrSample(alpha, beta, br)


class BrWindow:
    """Ring buffer over the most recent non-degenerate balance ratios."""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ConfigError("window capacity must be >= 1")
        self.capacity = capacity
        self.samples = deque(maxlen=capacity)

    def push(self, sample):
        br = sample.br if isinstance(sample, BrSample) else float(sample)
        if np.isfinite(br):
            self.samples.append(br)

    def __len__(self):
        return len(self.samples)

    def average(self):
        return window_average(self)


def window_average(w: BrWindow):
    if not w.samples:
        return None
    return float(np.mean(w.samples))


@dataclass
class ControllerState:
    kind: ControllerKind
    d_D: float
    d_min: float = 0.05
    d_max: float = 1.0
    delta_d: float = 0.05
    b_lo: float = 0.45
    b_hi: float = 0.55
    interval: int = 1000

    def __post_init__(self):
        self.kind = ControllerKind.parse(self.kind) if not isinstance(self.kind, ControllerKind) else self.kind
        if not self.b_lo < self.b_hi:
            raise ConfigError(f"need b_lo < b_hi, got [{self.b_lo}, {self.b_hi}]")
        if not 0.0 < self.d_min <= self.d_max <= 1.0:
            raise ConfigError(f"need 0 < d_min <= d_max <= 1, got {self.d_min}, {self.d_max}")
        if not self.d_min <= self.d_D <= self.d_max:
            raise ConfigError(f"d_D={self.d_D} outside [{self.d_min}, {self.d_max}]")
        if self.interval < 1:
            raise ConfigError("controller interval must be >= 1")


@dataclass(frozen=True)
class NoOp:
    pass


@dataclass(frozen=True)
class SetDiscDensity:
    density: float


@dataclass(frozen=True)
class DiscDst:
    pass


def _density(x: float) -> float:
    # keeps repeated +-delta_d steps on the decimal grid (0.3 + 0.05 == 0.35)
    return round(x, DENSITY_DECIMALS)


def _at_cap(d: float, cap: float) -> bool:
    return _density(d) >= _density(cap)


def _up(state, cap):
    return SetDiscDensity(_density(min(cap, state.d_D + state.delta_d)))


def _down(state):
    return SetDiscDensity(_density(max(state.d_min, state.d_D - state.delta_d)))


def dda_decide(br_avg, state: ControllerState):
    if br_avg is None:
        return NoOp()
    if br_avg > state.b_hi:
        return _up(state, state.d_max)
    if br_avg < state.b_lo:
        return _down(state)
    return NoOp()


def adapt_relax_decide(br_avg, state: ControllerState):
    """Like DDA, with the discriminator allowed to grow up to fully dense."""
    if br_avg is None:
        return NoOp()
    if br_avg > state.b_hi:
        return _up(state, 1.0)
    if br_avg < state.b_lo:
        return _down(state)
    return NoOp()


def adapt_strict_decide(br_avg, state: ControllerState):
    """At the density cap a too-weak discriminator explores via drop/grow instead."""
    if br_avg is None:
        return NoOp()
    if br_avg > state.b_hi:
        if _at_cap(state.d_D, state.d_max):
            return DiscDst()
        return _up(state, state.d_max)
    if br_avg < state.b_lo:
        return _down(state)
    return NoOp()


_DECIDERS = {
    ControllerKind.DDA_STATIC: dda_decide,
    ControllerKind.ADAPT_RELAX: adapt_relax_decide,
    ControllerKind.ADAPT_STRICT: adapt_strict_decide,
}
_PASSIVE = frozenset({ControllerKind.STATIC, ControllerKind.SDST, ControllerKind.DST_BOTH, ControllerKind.POSTHOC})


def controller_tick(t: int, kind, br_avg, state: ControllerState):
    """Dispatch to the controller for ``kind`` on its interval; NoOp otherwise."""
    if not isinstance(kind, ControllerKind):
        kind = ControllerKind.parse(kind)
    if kind in _PASSIVE:
        return NoOp()
    if kind not in _DECIDERS:
        raise ConfigError(f"no controller for {kind}")
    if t % state.interval != 0:
        return NoOp()
    return _DECIDERS[kind](br_avg, state)
