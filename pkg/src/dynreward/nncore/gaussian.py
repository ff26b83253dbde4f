"""Diagonal Gaussians with clamped log-std, reparameterized sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# keeps MLE-trained heads away from zero/exploding variance
DEFAULT_LOG_STD_BOUNDS = (-10.0, 2.0)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class DiagonalGaussian:
    """mean and log_std of matching shape; log_std is clamped on
    construction so std stays inside [exp(lo), exp(hi)]."""

    mean: np.ndarray
    log_std: np.ndarray
    bounds: tuple[float, float] = DEFAULT_LOG_STD_BOUNDS

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        lo, hi = self.bounds
        self.log_std = np.clip(np.asarray(self.log_std, dtype=np.float64), lo, hi)
        if self.mean.shape != self.log_std.shape:
            raise ValueError("mean and log_std shapes differ")

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def gaussian_log_prob(dist: DiagonalGaussian, x: np.ndarray) -> np.ndarray:
    """Log density, summed over the trailing dimension.

    Shapes broadcast: (d,) inputs give a scalar, (B, d) give (B,).
    """
    x = np.asarray(x, dtype=np.float64)
    z = (x - dist.mean) / dist.std
    per_dim = -0.5 * z * z - dist.log_std - 0.5 * _LOG_2PI
    return per_dim.sum(axis=-1)


def gaussian_sample(dist: DiagonalGaussian, rng: np.random.Generator,
                    size: int | None = None) -> np.ndarray:
    """Reparameterized draw: mean + std * eps with eps ~ N(0, I)."""
    if size is None:
        eps = rng.standard_normal(dist.mean.shape)
    else:
        eps = rng.standard_normal((size,) + dist.mean.shape)
    return dist.mean + dist.std * eps


def gaussian_entropy(dist: DiagonalGaussian) -> np.ndarray:
    """Differential entropy, summed over the trailing dimension."""
    per_dim = dist.log_std + 0.5 * (1.0 + _LOG_2PI)
    return per_dim.sum(axis=-1)
