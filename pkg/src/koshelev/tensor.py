"""Small dense linear algebra on gradient matrices and their Jacobian forms.

A gradient matrix ``z`` has shape ``(N, n)`` (rows are solution components,
columns are space directions); batches carry extra leading axes.  Jacobian
forms act on the row-major flattening of ``z`` and have shape
``(N*n, N*n)``.  ``|z|`` is always the Frobenius norm.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

SYM_TOL = 1e-12


class NotSymmetricError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


def frob(z: np.ndarray) -> np.ndarray:
    """Frobenius norm over the last two axes."""
    z = np.asarray(z, dtype=float)
    return np.sqrt(np.sum(z * z, axis=(-2, -1)))


def frob2(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.sum(z * z, axis=(-2, -1))


def inner(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Frobenius inner product ``x . y`` over the last two axes."""
    return np.sum(np.asarray(x) * np.asarray(y), axis=(-2, -1))


def v_mu(p: float, mu: float, v: np.ndarray) -> np.ndarray:
    """``(mu^2 + |v|^2)^((p-2)/4) v``."""
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    v = np.asarray(v, dtype=float)
    s = mu * mu + frob2(v)
    expo = (p - 2.0) / 4.0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(s > 0, np.power(np.where(s > 0, s, 1.0), expo), 0.0)
    if expo == 0:
        scale = np.ones_like(s)
    return scale[..., None, None] * v


def is_symmetric(m: np.ndarray, tol: float = SYM_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    return bool(np.abs(m - np.swapaxes(m, -1, -2)).max(initial=0.0) <= tol * scale)


def sym_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def skew_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m - np.swapaxes(m, -1, -2))


def sym_eigen_bounds(m: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not is_symmetric(m):
        raise NotSymmetricError("matrix is not symmetric")
    w = np.linalg.eigvalsh(sym_part(m))
    return float(w[0]), float(w[-1])


def operator_norm(m: np.ndarray) -> float:
    """Largest singular value."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def generalized_eigen_bounds(b: np.ndarray, a: np.ndarray) -> tuple[float, float]:
    """Extreme eigenvalues of ``B^{-1} A`` for SPD ``B`` and symmetric ``A``."""
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if not is_symmetric(b):
        raise NotPositiveDefiniteError("B is not symmetric")
    if not is_symmetric(a):
        raise NotSymmetricError("A is not symmetric")
    try:
        w = scipy.linalg.eigh(sym_part(a), sym_part(b), eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("B is not positive definite") from exc
    return float(w[0]), float(w[-1])


def pencil_eigenvalues(b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """All eigenvalues of ``B^{-1} A`` (``A`` may be nonsymmetric), batched."""
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.linalg.eigvals(np.linalg.solve(b, a))


def kron_component(a: np.ndarray, n: int) -> np.ndarray:
    """Matrix of ``z -> a z`` (``a`` acting on the component index) on flattened ``z``."""
    return np.kron(np.asarray(a, dtype=float), np.eye(n))
