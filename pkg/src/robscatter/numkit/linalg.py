"""Dense complex linear algebra helpers.

Matrices are plain ``numpy`` arrays (``complex128`` where complex), which store
entries as interleaved (re, im) pairs in row-major order.
"""

import numpy as np
import scipy.linalg

from ..errors import ParameterError, SingularMatrixError

HERMITIAN_ATOL = 1e-12


def vec(A):
    """Stack the columns of ``A`` top-to-bottom into a single vector.

    A leading batch axis is allowed: an array of shape ``(T, r, c)`` yields
    shape ``(T, r * c)``.
    """
    A = np.asarray(A)
    if A.ndim == 2:
        return A.reshape(-1, order="F")
    if A.ndim == 3:
        return np.swapaxes(A, -1, -2).reshape(A.shape[0], -1)
    raise ParameterError(f"vec expects a 2-D or batched 3-D array, got ndim={A.ndim}")


def unvec(v, rows, cols=None):
    """Inverse of :func:`vec` for a single vector."""
    cols = rows if cols is None else cols
    return np.asarray(v).reshape((rows, cols), order="F")


def kron(A, B):
    return np.kron(np.asarray(A), np.asarray(B))


def commutation_matrix(m, n):
    """Return the ``mn x mn`` permutation ``K`` with ``K @ vec(A) == vec(A.T)``
    for every ``m x n`` matrix ``A``."""
    if m < 1 or n < 1:
        raise ParameterError("commutation_matrix needs m, n >= 1")
    K = np.zeros((m * n, m * n))
    i, j = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    # A[i, j] sits at i + j*m in vec(A) and at j + i*n in vec(A.T)
    K[(j + i * n).ravel(), (i + j * m).ravel()] = 1.0
    return K


def toeplitz_scatter(rho, m):
    """Real Toeplitz scatter matrix with entries ``rho ** |i - j|``."""
    if not 0.0 <= rho < 1.0:
        raise ParameterError(f"rho must lie in [0, 1), got {rho}")
    if m < 1:
        raise ParameterError("m must be >= 1")
    return scipy.linalg.toeplitz(rho ** np.arange(m, dtype=float))


def is_hermitian(M, atol=HERMITIAN_ATOL):
    M = np.asarray(M)
    return M.ndim >= 2 and M.shape[-1] == M.shape[-2] and np.allclose(
        M, np.conj(np.swapaxes(M, -1, -2)), rtol=0.0, atol=atol * max(1.0, np.abs(M).max(initial=0.0))
    )


def cholesky(M):
    """Lower Cholesky factor of a Hermitian positive-definite matrix (or a stack).

    Raises
    ------
    SingularMatrixError
        If a pivot is not strictly positive. The matrix is never regularized.
    """
    M = np.asarray(M)
    if not is_hermitian(M, atol=1e-10):
        raise ParameterError("matrix is not Hermitian")
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc


def hermitian_inverse_solve(M, B):
    """Return ``inv(M) @ B`` for Hermitian positive-definite ``M``."""
    L = cholesky(M)
    return scipy.linalg.cho_solve((L, True), np.asarray(B), check_finite=False)


def quadratic_forms(Z, L):
    """Quadratic forms ``z^H (L L^H)^{-1} z`` for every row ``z`` of ``Z``.

    ``Z`` has shape ``(..., K, m)`` and ``L`` is the matching lower Cholesky
    factor(s) of shape ``(..., m, m)``.
    """
    Linv = np.linalg.inv(L)
    Y = Z @ np.swapaxes(Linv, -1, -2)
    Yr = Y.view(np.float64)
    return np.einsum("...i,...i->...", Yr, Yr)
