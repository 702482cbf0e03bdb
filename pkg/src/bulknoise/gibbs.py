"""Canonical Gibbs computations for the fixed-end harmonic chain."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .chain import difference_matrix, stiffness_matrix


@dataclass(frozen=True)
class GibbsParams:
    temperature: float
    tension: float = 0.0
    pinning: float = 0.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.pinning < 0:
            raise ValueError("pinning must be >= 0")


def gibbs_moments(gp: GibbsParams) -> tuple[float, float, float]:
    """``(<p_j^2>, <E_j>, <r_j>)`` in the unpinned (T, tau) ensemble."""
    if gp.pinning != 0:
        raise ValueError(
            "the tension ensemble exists only without pinning (nu = 0); "
            f"got pinning={gp.pinning}")
    t, tau = gp.temperature, gp.tension
    return t, t + 0.5 * tau**2, tau


def gibbs_covariance(n: int, temperature: float, pinning: float = 0.0) -> np.ndarray:
    """Equilibrium covariance of ``(q, p)``: ``T (-Delta + nu^2)^{-1}`` and ``T I``."""
    cov = np.zeros((2 * n, 2 * n))
    cov[:n, :n] = temperature * np.linalg.inv(stiffness_matrix(n, pinning))
    cov[n:, n:] = temperature * np.eye(n)
    return cov


@lru_cache(maxsize=16)
def _unit_energy_covariance(n: int, pinning: float) -> np.ndarray:
    # z = (q_1..q_N, r_0..r_N); every local energy is a diagonal form in z^2
    # plus p_j^2/2, and Cov(z_a^2, z_b^2) = 2 K_ab^2 for centred Gaussians.
    g = np.linalg.inv(stiffness_matrix(n, pinning))
    d = difference_matrix(n)
    lift = np.vstack([np.eye(n), d])
    k = lift @ g @ lift.T
    weights = np.zeros((n + 2, 2 * n + 1))
    sites = np.arange(1, n + 1)
    weights[sites, sites - 1] = 0.5 * pinning**2
    bonds = np.arange(n + 1)
    weights[bonds, n + bonds] += 0.25       # r_j belongs to E_j ...
    weights[bonds + 1, n + bonds] += 0.25   # ... and to E_{j+1}
    cov = weights @ (2.0 * k * k) @ weights.T
    cov[sites, sites] += 0.5                # Var(p^2/2) at T = 1
    cov.setflags(write=False)
    return cov


def energy_covariance_matrix(n: int, temperature: float = 1.0, pinning: float = 0.0) -> np.ndarray:
    """``Cov(E_i, E_j)`` for i, j = 0..N+1 at uniform temperature, exact."""
    return temperature**2 * _unit_energy_covariance(int(n), float(pinning))


def equilibrium_energy_covariance(i: int, j: int, temperature: float, pinning: float, n: int) -> float:
    if not (0 <= i <= n + 1 and 0 <= j <= n + 1):
        raise IndexError("site indices must lie in 0..N+1")
    return float(energy_covariance_matrix(n, temperature, pinning)[i, j])


def extend_profile(profile) -> np.ndarray:
    """Append the frozen end sites, giving them the temperature of their neighbour."""
    profile = np.asarray(profile, dtype=float)
    if np.any(profile <= 0):
        raise ValueError("temperatures must be > 0")
    return np.concatenate([profile[:1], profile, profile[-1:]])


def linear_profile(temp_left: float, temp_right: float, n: int) -> np.ndarray:
    return np.linspace(temp_left, temp_right, n)


def lte_fluctuation_prediction(profile, pinning: float = 0.0, n: int | None = None) -> float:
    """Local-equilibrium estimate of ``s_N = N <H;H> / <H>^2``.

    Each row j of the double sum uses the Gibbs state at the local temperature
    ``T_j``; ``<H>/N`` is the mean of the profile.
    """
    profile = np.asarray(profile, dtype=float)
    n = profile.size if n is None else n
    if profile.size != n:
        raise ValueError("profile length must equal N")
    ext = extend_profile(profile)
    unit = energy_covariance_matrix(n, 1.0, pinning)
    fluct = float(np.sum(ext**2 * unit.sum(axis=0))) / n
    return fluct / float(np.mean(profile)) ** 2
