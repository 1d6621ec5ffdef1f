"""Closed-form mixture-latent and uncertainty math, deterministic and testable.

Covers the reparameterized mixture draw z = sum_c omega_c (mu_c + sigma_c * eps),
the diagonal-Gaussian and categorical KL divergences that regularize it, and
the pixel-distance statistics (mean / population variance of per-point
distances to the nearest mask cell) used as uncertainty features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import PixelGrid
from .rng import Rng


@dataclass(frozen=True)
class MixtureParams:
    """K diagonal-Gaussian experts with a categorical weighting."""
    weights: np.ndarray  # (K,) nonneg, sums to 1
    mu: np.ndarray       # (K, D)
    sigma: np.ndarray    # (K, D) positive
    top_k: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be 1-D")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()}, not 1")
        k_experts = w.shape[0]
        if self.mu.shape[0] != k_experts or self.sigma.shape != self.mu.shape:
            raise ValueError("mu/sigma shapes inconsistent with weights")
        if (self.sigma <= 0).any():
            raise ValueError("sigma entries must be positive")
        if not (1 <= self.top_k <= k_experts):
            raise ValueError(f"top_k {self.top_k} out of [1, {k_experts}]")

    @property
    def n_experts(self) -> int:
        return self.weights.shape[0]


def top_k_select(weights, k: int, rng_seed: int) -> tuple[list[int], np.ndarray]:
    """Sample k distinct expert indices without replacement, proportionally to
    the weights; returns (indices in draw order, selected weights renormalized
    to sum 1)."""
    w = np.asarray(weights, dtype=float)
    n_positive = int((w > 0).sum())
    if k > n_positive:
        raise ValueError(f"cannot draw {k} experts from {n_positive} with positive weight")
    rng = Rng(rng_seed)
    remaining = w.copy()
    indices: list[int] = []
    for _ in range(k):
        idx = rng.choice_weighted(remaining)
        indices.append(idx)
        remaining[idx] = 0.0
    omega = w[indices]
    return indices, omega / omega.sum()


def reparameterize(params: MixtureParams, selected: tuple[list[int], np.ndarray],
                   eps: np.ndarray) -> np.ndarray:
    """z = sum_c omega_c (mu_c + sigma_c * eps), one shared eps draw."""
    indices, omega = selected
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (params.mu.shape[1],):
        raise ValueError(f"eps shape {eps.shape} != (D,) = ({params.mu.shape[1]},)")
    omega = np.asarray(omega, dtype=float)
    if len(indices) != omega.shape[0]:
        raise ValueError("selected indices and omega lengths differ")
    z = np.zeros_like(eps)
    for idx, wc in zip(indices, omega):
        z += wc * (params.mu[idx] + params.sigma[idx] * eps)
    return z


def kl_diag_gaussian(mu, sigma) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)) = sum_d (mu^2 + sigma^2 - 1 - 2 ln sigma)/2."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if (sigma <= 0).any():
        raise ValueError("sigma entries must be positive")
    return float(0.5 * np.sum(mu ** 2 + sigma ** 2 - 1.0 - 2.0 * np.log(sigma)))


def kl_diag_gaussian_grad(mu, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of kl_diag_gaussian with respect to (mu, ln sigma)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if (sigma <= 0).any():
        raise ValueError("sigma entries must be positive")
    return mu.copy(), sigma ** 2 - 1.0


def categorical_kl(w, prior) -> float:
    """KL between categorical distributions, sum_c w_c ln(w_c / prior_c) with
    the 0 ln 0 = 0 convention."""
    w = np.asarray(w, dtype=float)
    p = np.asarray(prior, dtype=float)
    if w.shape != p.shape:
        raise ValueError("w and prior shapes differ")
    support = w > 0
    if (p[support] <= 0).any():
        raise ValueError("prior has zero mass where w is positive")
    return float(np.sum(w[support] * np.log(w[support] / p[support])))


def pixel_dist(p_cell: tuple[int, int], mask: PixelGrid) -> float:
    """Euclidean pixel distance from a cell to the nearest set mask cell.

    The nearest cell stands in for an attention-selected segment: nearest is
    the zero-knowledge notion of most relevant.
    """
    rows, cols = np.nonzero(mask.values)
    if rows.size == 0:
        raise ValueError("mask has no set cells")
    col, row = p_cell
    d2 = (cols - col) ** 2 + (rows - row) ** 2
    return math.sqrt(float(d2.min()))


@dataclass(frozen=True)
class DistStats:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"negative variance {self.variance}")


def dist_stats(d) -> DistStats:
    """Population mean and population variance (divide by N) of distances."""
    arr = np.asarray(d, dtype=float)
    if arr.size == 0:
        raise ValueError("empty distance list")
    mean = float(arr.mean())
    variance = float(np.mean((arr - mean) ** 2))
    return DistStats(mean, max(variance, 0.0))
