"""Deterministic synthetic datasets for experiments and tests."""

from __future__ import annotations

import numpy as np


def scale_diverse_sinusoids(
    n: int,
    length: int,
    rng: np.random.Generator,
    period: int = 24,
    level_exponents: tuple[float, float] = (0.0, 5.0),
    rel_amplitude: float = 0.5,
) -> np.ndarray:
    """Seasonal series whose levels are log-uniform over several decades.

    y_i(t) = level_i * (1 + rel_amplitude * sin(2 pi t / period + phase_i))
    with level_i = 10 ** U[level_exponents]. Values stay positive for
    rel_amplitude < 1.
    """
    levels = 10.0 ** rng.uniform(*level_exponents, size=n)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
    t = np.arange(length)
    wave = np.sin(2.0 * np.pi * t[None, :] / period + phases[:, None])
    return levels[:, None] * (1.0 + rel_amplitude * wave)


def seasonal_low_rank(
    n: int,
    length: int,
    rng: np.random.Generator,
    noise: float = 0.01,
    periods: tuple[int, int] = (20, 10),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-2 data: two smooth seasonal basis rows mixed by positive
    loadings, plus multiplicative noise at the given relative level.

    Returns (values, true_loadings, true_basis).
    """
    t = np.arange(length)
    basis = np.stack(
        [
            1.0 + 0.6 * np.sin(2.0 * np.pi * t / periods[0]),
            1.0 + 0.6 * np.cos(2.0 * np.pi * t / periods[1]),
        ]
    )
    loadings = rng.uniform(0.5, 1.5, size=(n, 2))
    clean = loadings @ basis
    values = clean * (1.0 + noise * rng.standard_normal(clean.shape))
    return values, loadings, basis


def global_plus_local_spikes(
    n: int,
    length: int,
    rng: np.random.Generator,
    slow_period: int = 48,
    fast_period: int = 24,
    spike_period: int = 16,
    spike_height: float = 0.5,
    noise: float = 0.2,
) -> np.ndarray:
    """Low-rank global signal plus per-series periodic spikes and noise.

    The smooth component is shared (rank 2), so averaging across series
    recovers it even though each individual series only shows it buried
    in noise; the spikes have per-series phases, so they are invisible
    to a low-rank factorization but predictable from a series' own
    history. A model with both views should beat either single view.
    """
    t = np.arange(length)
    basis = np.stack(
        [
            1.0 + 0.8 * np.sin(2.0 * np.pi * t / slow_period),
            1.0 + 0.4 * np.sin(2.0 * np.pi * t / fast_period),
        ]
    )
    loadings = rng.uniform(0.5, 1.5, size=(n, 2))
    values = loadings @ basis
    offsets = rng.integers(0, spike_period, size=n)
    scale = values.mean(axis=1)
    for i in range(n):
        spikes = (t % spike_period) == offsets[i]
        values[i, spikes] += spike_height * scale[i]
    values += noise * scale[:, None] * rng.standard_normal(values.shape)
    return values
