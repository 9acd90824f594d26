"""Gaussian-mixture toy datasets and seeded random streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

# one independent PCG64 stream per concern, spawned from the run seed
STREAMS = ("data", "latent", "init", "dst", "eval")


def make_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAMS, children)}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "ring"
    k: int = 8
    radius: float = 2.0
    m: int = 5
    spacing: float = 2.0
    sigma: float = 0.02

    @classmethod
    def from_config(cls, cfg) -> "DatasetSpec":
        return cls(cfg.dataset, cfg.ring_k, cfg.ring_radius, cfg.grid_m, cfg.grid_spacing, cfg.data_sigma)

    def centers(self) -> np.ndarray:
        if self.kind == "ring":
            angles = 2.0 * np.pi * np.arange(self.k) / self.k
            return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        if self.kind == "grid":
            ticks = (np.arange(self.m) - (self.m - 1) / 2.0) * self.spacing
            xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
            return np.stack([xx.ravel(), yy.ravel()], axis=1)
        raise ConfigError(f"unknown dataset kind {self.kind!r}")


def sample_dataset(spec: DatasetSpec, n: int, rng) -> np.ndarray:
    """``n`` points: a uniformly chosen center plus isotropic Gaussian noise."""
    if n < 1:
        raise ConfigError("need n >= 1 samples")
    centers = spec.centers()
    idx = rng.integers(len(centers), size=n)
    return centers[idx] + spec.sigma * rng.standard_normal((n, 2))
