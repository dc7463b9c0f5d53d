"""Dense solver and symmetric eigensolver for oracles and spectral analysis.

Both run in float64 regardless of the caller's dtype. They back the exact
diffusion oracle and the spectrum reports, never the training path, so
clarity wins over speed: partial-pivot elimination and cyclic Jacobi
rotations, nothing fancier.
"""

from __future__ import annotations

import numpy as np

__all__ = ["dense_solve", "sym_eigen", "SingularMatrixError", "AsymmetricMatrixError"]

_PIVOT_TOL = 1e-12
_SYM_TOL = 1e-10


class SingularMatrixError(ValueError):
    """Pivot magnitude fell below tolerance during elimination."""


class AsymmetricMatrixError(ValueError):
    """sym_eigen was handed a matrix that is not symmetric."""


def dense_solve(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve M X = B by Gaussian elimination with partial pivoting.

    B may be a vector or a matrix of right-hand sides.
    """
    m = np.array(m, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"dense_solve: M must be square, got {m.shape}")
    if m.shape[0] > 2000:
        raise ValueError("dense_solve is oracle-scale only (n <= 2000)")
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    if b.shape[0] != m.shape[0]:
        raise ValueError("dense_solve: B row count must match M")
    n = m.shape[0]

    for k in range(n):
        pivot_row = k + int(np.argmax(np.abs(m[k:, k])))
        pivot = m[pivot_row, k]
        if abs(pivot) < _PIVOT_TOL:
            raise SingularMatrixError(f"pivot {pivot:.3e} below {_PIVOT_TOL} at column {k}")
        if pivot_row != k:
            m[[k, pivot_row]] = m[[pivot_row, k]]
            b[[k, pivot_row]] = b[[pivot_row, k]]
        factors = m[k + 1 :, k] / pivot
        m[k + 1 :, k:] -= factors[:, None] * m[k, k:]
        b[k + 1 :] -= factors[:, None] * b[k]

    x = np.empty_like(b)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - m[k, k + 1 :] @ x[k + 1 :]) / m[k, k]
    return x[:, 0] if squeeze else x


def sym_eigen(m: np.ndarray, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns, orthonormal).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"sym_eigen: matrix must be square, got {m.shape}")
    if m.shape[0] > 500:
        raise ValueError("sym_eigen is verification-scale only (n <= 500)")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > _SYM_TOL:
        raise AsymmetricMatrixError(f"max |M - M^T| = {asym:.3e} exceeds {_SYM_TOL}")

    n = m.shape[0]
    a = (m + m.T) / 2.0
    v = np.eye(n)
    if n <= 1:
        return np.diag(a).copy(), v

    scale = max(np.max(np.abs(a)), 1.0)
    tol = 1e-14 * scale
    for _ in range(max_sweeps):
        off = np.max(np.abs(a - np.diag(np.diag(a))))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol:
                    continue
                # stable rotation angle (Golub & Van Loan)
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                row_p, row_q = a[p].copy(), a[q].copy()
                a[p] = c * row_p - s * row_q
                a[q] = s * row_p + c * row_q
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, q] = 0.0
                a[q, p] = 0.0

                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("sym_eigen: Jacobi sweeps did not converge")

    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals, kind="stable")
    return eigvals[order], v[:, order]
