"""Robust complex scatter estimation with coupled Monte Carlo verification."""

__version__ = "0.1.0"

from .ces import CESModel, RngStream, sample_coupled_batch, sample_texture  # noqa: E402
from .estimators import (huber_weight, m_estimate, m_estimate_batch, scm, solve_sigma,  # noqa: E402
                         student_weight, tyler_weight, weight_library)
from .asymptotics import (AsymCoeffs, build_structured_cov, coeffs_closed_form,  # noqa: E402
                          coeffs_monte_carlo, extract_identity_pattern)
from .mahalanobis import mahalanobis_sq, phi_variance, ref_distribution  # noqa: E402
