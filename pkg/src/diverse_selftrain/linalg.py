"""Dense linear-algebra kernels: products, symmetric eigensolver, PCA, solves.

Matrices are plain 2-D ``float64`` numpy arrays.  The eigensolver is a cyclic
Jacobi iteration and the solver is LU with partial pivoting; both live in
``_kernels`` with a numba and a numpy path.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    ConvergenceError,
    InsufficientDataError,
    ShapeError,
    SingularMatrixError,
)

SYMMETRY_TOL = 1e-10
PIVOT_TOL = 1e-12
JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class EigenResult:
    """Spectrum sorted in descending order, eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    @property
    def lambda_max(self):
        return float(self.eigenvalues[0])

    @property
    def lambda_min(self):
        return float(self.eigenvalues[-1])


def as_matrix(x, name="matrix"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} produced non-finite entries")
    return a


def matmul(a, b):
    """Matrix product with explicit shape checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite(a @ b, "matmul")


def sym_eigen(a, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS, backend=None):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Symmetric within ``1e-10`` (relative to its largest entry).
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm falls below
        ``tol * ||a||_F``.
    max_sweeps : int
        Raises ``ConvergenceError`` when exceeded.

    Returns
    -------
    EigenResult
        Eigenvalues in descending order with matching orthonormal columns.
    """
    a = as_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise ShapeError(f"sym_eigen needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if n and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise ShapeError("sym_eigen needs a symmetric matrix")
    if n == 0:
        return EigenResult(np.zeros(0), np.zeros((0, 0)))
    # symmetrize exactly so rotations act on a truly symmetric matrix
    a = 0.5 * (a + a.T)
    w, v, converged, sweeps = _kernels.jacobi_eigen(a, tol, max_sweeps, backend)
    if not converged:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(-w, kind="stable")
    return EigenResult(w[order], v[:, order], int(sweeps))


def _fix_sign(v):
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def first_principal_component(x, backend=None):
    """Unit top eigenvector of the column-centred sample covariance of ``x``.

    The sign is fixed so that the largest-magnitude entry is positive.
    """
    x = as_matrix(x, "x")
    if x.shape[0] < 2:
        raise InsufficientDataError("PCA needs at least two rows")
    xc = x - x.mean(axis=0)
    cov = (xc.T @ xc) / (x.shape[0] - 1)
    eig = sym_eigen(cov, backend=backend)
    return _fix_sign(eig.eigenvectors[:, 0].copy())


def project_first_component(x, backend=None):
    """Projection of each centred row of ``x`` on its first principal component."""
    x = as_matrix(x, "x")
    v = first_principal_component(x, backend=backend)
    return (x - x.mean(axis=0)) @ v


def solve_linear(a, b, pivot_tol=PIVOT_TOL, backend=None):
    """Solve ``a @ x = b`` by LU with partial pivoting.

    ``b`` may be a vector or a matrix; the result has the same layout.
    Raises ``SingularMatrixError`` when a pivot falls below
    ``pivot_tol * max|a|``.
    """
    a = as_matrix(a, "a")
    b_arr = np.asarray(b, dtype=np.float64)
    vector_rhs = b_arr.ndim == 1
    b2 = b_arr[:, None] if vector_rhs else b_arr
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_linear needs a square matrix, got {a.shape}")
    if b2.ndim != 2 or b2.shape[0] != a.shape[0]:
        raise ShapeError(f"right-hand side {b_arr.shape} does not match {a.shape}")
    x, ok = _kernels.lu_solve(a, b2, pivot_tol, backend)
    if not ok:
        raise SingularMatrixError("matrix is singular to working precision")
    _check_finite(x, "solve_linear")
    return x[:, 0] if vector_rhs else x
