"""Linear algebra helpers and scalar special functions."""

from .linalg import (
    cholesky,
    commutation_matrix,
    hermitian_inverse_solve,
    is_hermitian,
    kron,
    quadratic_forms,
    toeplitz_scatter,
    unvec,
    vec,
)
from .special import (
    chi2_cdf,
    chi2_pdf,
    chi2_quantile,
    log_beta,
    reg_incomplete_beta,
    reg_incomplete_gamma_P,
)

__all__ = [
    "chi2_cdf",
    "chi2_pdf",
    "chi2_quantile",
    "cholesky",
    "commutation_matrix",
    "hermitian_inverse_solve",
    "is_hermitian",
    "kron",
    "log_beta",
    "quadratic_forms",
    "reg_incomplete_beta",
    "reg_incomplete_gamma_P",
    "toeplitz_scatter",
    "unvec",
    "vec",
]
