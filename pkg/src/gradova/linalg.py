"""Covariance accumulation, regularized symmetric inversion and quadratic forms.

Everything is float64. Vectors are 1-D arrays, collections of vectors are
2-D arrays with one row per sample.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

SYMMETRY_RTOL = 1e-12


def as_matrix(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a list of vectors, got array of shape {arr.shape}")
    return arr


def covariance(samples, mean) -> np.ndarray:
    """(1/N) * sum_i (x_i - mean)(x_i - mean)^T, symmetrized."""
    x = np.asarray(samples, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if x.size == 0 or len(x) == 0:
        raise ValueError("covariance of an empty sample list")
    x = as_matrix(x)
    if mean.ndim != 1 or x.shape[1] != mean.shape[0]:
        raise ValueError(f"dimension mismatch: samples have {x.shape[1]} columns, mean has {mean.shape}")
    centered = x - mean
    cov = centered.T @ centered / len(x)
    return 0.5 * (cov + cov.T)


def is_symmetric(m: np.ndarray) -> bool:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    tol = SYMMETRY_RTOL * np.maximum(1.0, np.abs(m))
    return bool(np.all(np.abs(m - m.T) <= tol))


def regularization(m: np.ndarray, epsilon_scale: float) -> float:
    trace = float(np.trace(m))
    return epsilon_scale * trace / m.shape[0] if trace != 0.0 else float(epsilon_scale)


def regularized_inverse(m, epsilon_scale: float = 1e-6) -> np.ndarray:
    """Return (m + eps*I)^-1 with eps = epsilon_scale * trace(m) / D.

    When the trace is zero, eps falls back to ``epsilon_scale`` itself. The
    inverse is formed from the Cholesky factor and symmetrized.
    """
    m = np.asarray(m, dtype=np.float64)
    if not is_symmetric(m):
        raise ValueError("regularized_inverse requires a symmetric matrix")
    if epsilon_scale <= 0:
        raise ValueError("epsilon_scale must be positive")
    d = m.shape[0]
    eps = regularization(m, epsilon_scale)
    lower = sla.cholesky(m + eps * np.eye(d), lower=True)
    inv_lower = sla.solve_triangular(lower, np.eye(d), lower=True)
    inv = inv_lower.T @ inv_lower
    return 0.5 * (inv + inv.T)


def quadratic_form(x, mu, precision) -> float:
    """(x - mu)^T P (x - mu), clamped at zero."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    p = np.asarray(precision, dtype=np.float64)
    if x.shape != mu.shape or x.ndim != 1 or p.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"dimension mismatch: x {x.shape}, mu {mu.shape}, precision {p.shape}")
    d = x - mu
    return max(float(d @ (p @ d)), 0.0)


def quadratic_forms(x, mu, precision) -> np.ndarray:
    """Row-wise quadratic forms; ``mu`` is one vector or one row per sample."""
    x = as_matrix(x)
    mu = np.asarray(mu, dtype=np.float64)
    p = np.asarray(precision, dtype=np.float64)
    if x.shape[1] != p.shape[0] or p.shape[0] != p.shape[1] or mu.shape[-1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: x {x.shape}, mu {mu.shape}, precision {p.shape}")
    d = x - mu
    values = np.einsum("ij,ij->i", d @ p, d)
    return np.maximum(values, 0.0)
