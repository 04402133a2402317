"""Systematic-scan Gibbs samplers under Dobrushin-type uniqueness conditions.

Dobrushin interdependence matrices, exact and Monte Carlo convergence of the
sweep kernel in Wasserstein distance, and concentration of empirical means.
"""
__version__ = "0.1.0"

from .core import GroundMetric, LipschitzProfile, l1_distance, lipschitz_profile
from .dobrushin import coefficient_matrix, q_closed_form, q_product, verify_lemma_bounds
from .models import FinitePmf, FinitePotential, FreeModel, Gaussian, GaussianLinear, IsingGraph, exact_gibbs_measure

__all__ = [
    "__version__",
    "GroundMetric",
    "LipschitzProfile",
    "l1_distance",
    "lipschitz_profile",
    "coefficient_matrix",
    "q_closed_form",
    "q_product",
    "verify_lemma_bounds",
    "FinitePmf",
    "FinitePotential",
    "FreeModel",
    "Gaussian",
    "GaussianLinear",
    "IsingGraph",
    "exact_gibbs_measure",
]
