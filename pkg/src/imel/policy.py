"""Diagonal Gaussian policy math.

All functions broadcast over leading axes; the last axis is the action
dimension and is summed where a scalar per action is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.broadcast_to(np.asarray(self.std, dtype=np.float64), mean.shape).copy()
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise ValueError("Gaussian stats must be finite")
        if np.any(std <= 0.0):
            raise ValueError("standard deviation must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def sample(stats: GaussianStats, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
    """``mean + std * xi`` with xi drawn from ``rng``; ``deterministic`` returns the mean."""
    if deterministic:
        return stats.mean.copy()
    return stats.mean + stats.std * rng.standard_normal(stats.mean.shape)


def log_prob(stats: GaussianStats, action) -> float | np.ndarray:
    z = (np.asarray(action, dtype=np.float64) - stats.mean) / stats.std
    return np.sum(-0.5 * z * z - np.log(stats.std) - LOG_SQRT_2PI, axis=-1)


def score_mean(stats: GaussianStats, action) -> np.ndarray:
    """Gradient of log_prob with respect to the mean: ``(a - mu) / sigma^2``."""
    return (np.asarray(action, dtype=np.float64) - stats.mean) / stats.std ** 2


def kl_equal_sigma(mean_new, mean_old, sigma):
    """KL between two diagonal Gaussians sharing ``sigma``, summed over dims."""
    diff = np.asarray(mean_new, dtype=np.float64) - np.asarray(mean_old, dtype=np.float64)
    return np.sum(diff * diff / (2.0 * np.asarray(sigma, dtype=np.float64) ** 2), axis=-1)


def gaussian_kl(mean_p, std_p, mean_q, std_q):
    """KL(p || q) for diagonal Gaussians, summed over the last axis."""
    var_p, var_q = std_p ** 2, std_q ** 2
    return np.sum(
        np.log(std_q / std_p) + (var_p + (mean_p - mean_q) ** 2) / (2.0 * var_q) - 0.5, axis=-1
    )
