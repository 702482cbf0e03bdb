"""Harmonic chains with energy-conserving bulk noise.

Exact second moments of the velocity-flip and self-consistent models,
a stochastic integrator with a compiled kernel, hydrodynamic and
fluctuating-hydrodynamic solvers, and batch-means estimators.
"""

__version__ = "0.1.0"

from .chain import ChainParams, ChainState, Model, hamiltonian, local_observables, total_energy
from .flucthydro import ness_field_covariance, s_infinity, spde_simulate
from .gibbs import GibbsParams, gibbs_covariance, gibbs_moments, lte_fluctuation_prediction
from .hydro import HydroState, hydro_evolve, hydro_step
from .moments import (SecondMoments, b_kernel, self_consistent_profile, spectral_gap,
                      stationary_covariance)
from .stats import EstimateWithError, batch_means, estimate_s

__all__ = [
    "ChainParams", "ChainState", "Model", "hamiltonian", "local_observables", "total_energy",
    "ness_field_covariance", "s_infinity", "spde_simulate",
    "GibbsParams", "gibbs_covariance", "gibbs_moments", "lte_fluctuation_prediction",
    "HydroState", "hydro_evolve", "hydro_step",
    "SecondMoments", "b_kernel", "self_consistent_profile", "spectral_gap", "stationary_covariance",
    "EstimateWithError", "batch_means", "estimate_s",
]
