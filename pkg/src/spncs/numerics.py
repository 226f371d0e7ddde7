"""Small dense real-matrix kernel.

Matrices are 2-D float64 numpy arrays. Every entry point rejects non-finite
input. Inversion is LU with partial pivoting and symmetric eigenvalues come from
cyclic Jacobi rotations, so results are deterministic for the tiny matrices
used throughout the package.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AsymmetryError, DimensionError, NonFiniteError, SingularMatrixError

PIVOT_RTOL = 1e-12
SYMMETRY_RTOL = 1e-10
JACOBI_RTOL = 1e-12
_JACOBI_MAX_SWEEPS = 100


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array (copies)."""
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    check_finite(m, name)
    return m


def check_finite(a: np.ndarray, name: str = "value") -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains NaN or Inf")


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols))


def mat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def lu_factor(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Doolittle LU with partial pivoting.

    Returns the packed LU array and the row permutation. Raises
    SingularMatrixError naming the pivot column whose best candidate is below
    PIVOT_RTOL times the largest absolute entry of ``a``.
    """
    a = as_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise DimensionError(f"LU needs a square matrix, got {a.shape}")
    lu = a.copy()
    perm = np.arange(n)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    threshold = PIVOT_RTOL * scale
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) <= threshold or scale == 0.0:
            raise SingularMatrixError(k)
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm


def lu_solve(lu: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    y = (b.reshape(-1, 1) if vec else b)[perm].copy()
    n = lu.shape[0]
    for i in range(n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] -= lu[i, i + 1:] @ y[i + 1:]
        y[i] /= lu[i, i]
    return y.ravel() if vec else y


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lu, perm = lu_factor(a)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != lu.shape[0]:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, expected {lu.shape[0]}")
    return lu_solve(lu, perm, b)


def mat_inv(a: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "a")
    if a.shape == (0, 0):
        return a.copy()
    lu, perm = lu_factor(a)
    return lu_solve(lu, perm, np.eye(a.shape[0]))


def check_symmetric(a: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1e-300)
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise AsymmetryError(f"matrix asymmetry {asym:.3e} exceeds {SYMMETRY_RTOL:g} relative")
    return a


def sym_eigvals(a: np.ndarray) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi."""
    a = check_symmetric(a)
    m = 0.5 * (a + a.T)
    n = m.shape[0]
    if n == 0:
        return np.zeros(0)
    fro = math.sqrt(float(np.sum(m * m)))
    target = JACOBI_RTOL * fro
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = math.sqrt(max(float(np.sum(m * m) - np.sum(np.diag(m) ** 2)), 0.0))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # theta^2 would overflow
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = m[p, :].copy()
                rq = m[q, :].copy()
                m[p, :] = c * rp - s * rq
                m[q, :] = s * rp + c * rq
                cp = m[:, p].copy()
                cq = m[:, q].copy()
                m[:, p] = c * cp - s * cq
                m[:, q] = s * cp + c * cq
                m[p, q] = m[q, p] = 0.0
    return np.sort(np.diag(m))


def sym_eig_extremes(a: np.ndarray) -> tuple[float, float]:
    w = sym_eigvals(a)
    if w.size == 0:
        raise DimensionError("eigenvalues of an empty matrix are undefined")
    return float(w[0]), float(w[-1])


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value, sqrt(lambda_max(a^T a))."""
    a = as_matrix(a, "a")
    if a.size == 0:
        return 0.0
    gram = a.T @ a if a.shape[1] <= a.shape[0] else a @ a.T
    gram = 0.5 * (gram + gram.T)
    return math.sqrt(max(sym_eig_extremes(gram)[1], 0.0))


def is_neg_semidefinite(a: np.ndarray, tol: float = 0.0) -> bool:
    return sym_eig_extremes(a)[1] <= tol
