"""Dense symmetric-matrix primitives.

Everything downstream (transport distances, filters, the interior-point
solver) funnels its linear algebra through this module so that tolerance
policy lives in one place:

* matrices are symmetrized on ingest, ``(X + X.T) / 2``, which is bit-exactly
  symmetric in floating point;
* positive semidefiniteness is checked against ``1e-9 * max(1, trace)``, and
  eigenvalues inside that band are clamped to zero rather than rejected;
* LDL pivots are computed by the leading-submatrix Schur-complement formula,
  with a pivot-magnitude proxy guarding against singular submatrices.
"""

from __future__ import annotations

import numpy as np

from .errors import DimMismatchError, NotPSDError, SingularSubmatrixError

__all__ = [
    "symmetrize",
    "sqrt_psd",
    "bures_cross",
    "ldl_diagonals",
    "min_eigenvalue",
]

#: Relative eigenvalue tolerance for PSD checks.
PSD_RTOL = 1e-9

#: Relative pivot-magnitude threshold below which a leading submatrix is
#: treated as singular.
SINGULAR_PIVOT_RTOL = 1e-12


def _as_square(x, name: str = "matrix") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimMismatchError(f"{name} must be square, got shape {x.shape}")
    return x


def symmetrize(x) -> np.ndarray:
    """Return ``(X + X.T) / 2`` as a float array.

    Scalars and 1x1 arrays are promoted to shape ``(1, 1)``.
    """
    x = _as_square(x)
    return (x + x.T) / 2.0


def psd_tolerance(x: np.ndarray) -> float:
    """Absolute eigenvalue tolerance used when checking ``x`` for PSD."""
    return PSD_RTOL * max(1.0, abs(float(np.trace(x))))


def min_eigenvalue(x) -> float:
    """Smallest eigenvalue of the symmetrized input."""
    return float(np.linalg.eigvalsh(symmetrize(x))[0])


def sqrt_psd(x, tol: float | None = None) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues in ``[-tol, 0)`` are treated as roundoff and clamped to
    zero; anything below ``-tol`` raises.

    Parameters
    ----------
    x : array_like
        Symmetric positive semidefinite matrix.
    tol : float, optional
        Absolute eigenvalue tolerance. Defaults to
        ``1e-9 * max(1, trace(x))``.

    Returns
    -------
    ndarray
        Symmetric PSD matrix ``S`` with ``S @ S`` equal to ``x`` up to
        roundoff.

    Raises
    ------
    NotPSDError
        If an eigenvalue is smaller than ``-tol``.
    """
    x = symmetrize(x)
    if tol is None:
        tol = psd_tolerance(x)
    w, v = np.linalg.eigh(x)
    if w[0] < -tol:
        raise NotPSDError(
            f"matrix has eigenvalue {w[0]:.3e} below -{tol:.3e}"
        )
    w = np.maximum(w, 0.0)
    root = (v * np.sqrt(w)) @ v.T
    return (root + root.T) / 2.0


def bures_cross(m1, m2) -> float:
    """Trace of ``sqrt(sqrt(M1) @ M2 @ sqrt(M1))`` for PSD ``M1``, ``M2``.

    This is the cross term of the Gaussian quadratic transport cost. The
    inner product matrix is symmetrized and its eigenvalues clamped at zero
    before the outer square root, so slightly indefinite inputs caused by
    roundoff do not poison the result.
    """
    m1 = symmetrize(m1)
    m2 = symmetrize(m2)
    if m1.shape != m2.shape:
        raise DimMismatchError(
            f"operands must share shape, got {m1.shape} and {m2.shape}"
        )
    r1 = sqrt_psd(m1)
    # PSD check on m2 only; its eigenvalues are not otherwise needed.
    if min_eigenvalue(m2) < -psd_tolerance(m2):
        raise NotPSDError("second operand is not positive semidefinite")
    inner = symmetrize(r1 @ m2 @ r1)
    w = np.linalg.eigvalsh(inner)
    return float(np.sum(np.sqrt(np.maximum(w, 0.0))))


def ldl_diagonals(x) -> np.ndarray:
    """Pivots of the (unit lower triangular) LDL' factorization.

    The j-th pivot is ``x[j, j] - c' Z^{-1} c`` where ``Z`` is the leading
    ``j x j`` principal submatrix and ``c = x[:j, j]``, evaluated directly
    from that Schur-complement formula. Pivots exist whenever every leading
    principal submatrix is nonsingular; singularity is detected through the
    pivot product, which equals the submatrix determinant.

    Parameters
    ----------
    x : array_like
        Symmetric matrix.

    Returns
    -------
    ndarray
        The ``n`` pivots. For positive definite input these are the
        squared diagonal entries of the Cholesky factor.

    Raises
    ------
    SingularSubmatrixError
        If a leading principal submatrix needed for a later pivot is
        singular (a pivot magnitude falls below
        ``1e-12 * max(1, max |diag|)``).
    """
    x = symmetrize(x)
    n = x.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(x)))) if n else 1.0)
    thresh = SINGULAR_PIVOT_RTOL * scale
    d = np.empty(n)
    for j in range(n):
        if j == 0:
            d[0] = x[0, 0]
            continue
        if np.min(np.abs(d[:j])) < thresh:
            raise SingularSubmatrixError(
                f"leading {j}x{j} submatrix is singular within tolerance"
            )
        c = x[:j, j]
        u = np.linalg.solve(x[:j, :j], c)
        d[j] = x[j, j] - c @ u
    return d


def ldl_pivot_data(x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Pivots together with the solves ``u_j = Z_j^{-1} c_j``.

    Shares the computation of :func:`ldl_diagonals` and additionally returns
    the vectors needed for pivot gradients (``u_0`` is the empty vector).
    """
    x = symmetrize(x)
    n = x.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(x)))) if n else 1.0)
    thresh = SINGULAR_PIVOT_RTOL * scale
    d = np.empty(n)
    us: list[np.ndarray] = []
    for j in range(n):
        if j == 0:
            d[0] = x[0, 0]
            us.append(np.empty(0))
            continue
        if np.min(np.abs(d[:j])) < thresh:
            raise SingularSubmatrixError(
                f"leading {j}x{j} submatrix is singular within tolerance"
            )
        c = x[:j, j]
        u = np.linalg.solve(x[:j, :j], c)
        d[j] = x[j, j] - c @ u
        us.append(u)
    return d, us
