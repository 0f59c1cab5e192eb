"""Synthetic ground truths and measurement noise."""

from __future__ import annotations

import numpy as np

from ..sampling import rng_for

__all__ = [
    "gen_sparse_spikes",
    "spike_positions",
    "gen_shepp_logan",
    "SHEPP_LOGAN_ELLIPSES",
    "gen_piecewise_image",
    "add_gaussian_noise",
    "beer_lambert_noise",
]

# modified (high-contrast) Shepp-Logan: intensity, semi-axes a, b, centre x0, y0, angle in degrees
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def spike_positions(d: int, n_spikes: int) -> np.ndarray:
    """Evenly spaced positions ``floor((j + 1/2) d / n_spikes)``."""
    j = np.arange(n_spikes)
    return ((2 * j + 1) * d) // (2 * n_spikes)


def gen_sparse_spikes(d: int, n_spikes: int, seed: int = 0) -> np.ndarray:
    """Sparse vector with ``n_spikes`` evenly spaced entries.

    Each spike has a random sign and a magnitude drawn uniformly from
    ``[0.5, 1.5]``.
    """
    if not 1 <= n_spikes <= d:
        raise ValueError("need 1 <= n_spikes <= d")
    rng = rng_for(seed, "signal")
    x = np.zeros(d)
    signs = rng.choice([-1.0, 1.0], size=n_spikes)
    mags = rng.uniform(0.5, 1.5, size=n_spikes)
    x[spike_positions(d, n_spikes)] = signs * mags
    return x


def _ellipse_mask(X, Y, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    c, s = np.cos(phi), np.sin(phi)
    xr = (X - x0) * c + (Y - y0) * s
    yr = -(X - x0) * s + (Y - y0) * c
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def gen_shepp_logan(size: int, ellipses=SHEPP_LOGAN_ELLIPSES) -> np.ndarray:
    """Modified Shepp-Logan phantom sampled at pixel centres, rows from top to bottom."""
    if size < 16:
        raise ValueError("phantom size must be >= 16")
    c = (np.arange(size) + 0.5) * 2.0 / size - 1.0
    X, Y = np.meshgrid(c, -c)
    img = np.zeros((size, size))
    for A, a, b, x0, y0, phi in ellipses:
        img[_ellipse_mask(X, Y, a, b, x0, y0, phi)] += A
    return np.clip(img, 0.0, 1.0)


def gen_piecewise_image(size: int, linear: bool = False) -> np.ndarray:
    """Small test image: a bright square on a dark background, or a ramp with a step for ``linear``."""
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    if linear:
        return np.where(x < 0.5, x, 1.5 - x) * (0.5 + 0.5 * (y > 0.3))
    img = np.zeros((size, size))
    q = size // 4
    img[q:size - q, q:size - q] = 1.0
    img[size // 2:, :q] = 0.5
    return img


def add_gaussian_noise(v, sigma: float, seed: int = 0) -> np.ndarray:
    """``v + eta`` with ``eta ~ N(0, sigma^2 I)``."""
    v = np.asarray(v, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return v.copy()
    return v + sigma * rng_for(seed, "noise").standard_normal(v.shape)


def beer_lambert_noise(v, I0: float, seed: int = 0) -> np.ndarray:
    """Photon-count noise on line integrals ``v``.

    Counts ``N ~ Poisson(I0 exp(-v))`` are clamped to at least one before
    taking ``-log(N / I0)``, so the output is always finite.
    """
    v = np.asarray(v, dtype=float)
    if not I0 > 0:
        raise ValueError("I0 must be positive")
    if np.any(v < 0):
        raise ValueError("line integrals must be non-negative")
    counts = rng_for(seed, "noise").poisson(I0 * np.exp(-v))
    counts = np.maximum(counts, 1)
    return -np.log(counts / I0)
