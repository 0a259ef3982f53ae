"""Quadrature on the reference simplex in barycentric coordinates.

Degrees 1 and 2 use small symmetric rules; higher degrees use collapsed
(conical product) Gauss-Jacobi rules.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 30


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    dim: int
    degree: int
    points: np.ndarray  # (q, dim+1) barycentric
    weights: np.ndarray  # (q,) summing to the reference volume 1/dim!

    @property
    def unit_weights(self) -> np.ndarray:
        """Weights normalized to sum to one (multiply by the element volume)."""
        return self.weights * math.factorial(self.dim)

    def __len__(self):
        return len(self.weights)


def _symmetric(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    vol = 1.0 / math.factorial(dim)
    if degree <= 1:
        return np.full((1, dim + 1), 1.0 / (dim + 1)), np.array([vol])
    if dim == 2:
        a, b = 2.0 / 3.0, 1.0 / 6.0
    else:
        a, b = 0.5854101966249685, 0.1381966011250105
    pts = np.full((dim + 1, dim + 1), b)
    np.fill_diagonal(pts, a)
    return pts, np.full(dim + 1, vol / (dim + 1))


def _gauss_jacobi01(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    # nodes/weights on [0,1] for the weight (1-u)^alpha
    t, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1.0)


def _collapsed(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    n = degree // 2 + 1
    rules = [_gauss_jacobi01(n, float(dim - 1 - k)) for k in range(dim)]
    pts, wts = [], []
    for idx in itertools.product(range(n), repeat=dim):
        u = [rules[k][0][idx[k]] for k in range(dim)]
        w = math.prod(rules[k][1][idx[k]] for k in range(dim))
        # x_0 = u_0, x_1 = (1-u_0) u_1, x_2 = (1-u_0)(1-u_1) u_2
        x, rest = [], 1.0
        for k in range(dim):
            x.append(rest * u[k])
            rest *= 1.0 - u[k]
        pts.append([1.0 - sum(x), *x])
        wts.append(w)
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    """Rule on the reference ``dim``-simplex exact for polynomials of ``degree``."""
    if dim not in (2, 3):
        raise QuadratureError(f"no rules for dim={dim}")
    if not 0 <= degree <= MAX_DEGREE:
        raise QuadratureError(f"no rule of degree {degree} (supported 0..{MAX_DEGREE})")
    if degree <= 2:
        pts, wts = _symmetric(dim, degree)
    else:
        pts, wts = _collapsed(dim, degree)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(dim, max(degree, 1), pts, wts)


def monomial_integral(alpha) -> float:
    """Exact ``int_ref prod lambda_i^alpha_i`` over the reference simplex with ``len(alpha) - 1`` dims."""
    d = len(alpha) - 1
    return math.prod(math.factorial(a) for a in alpha) / math.factorial(sum(alpha) + d)
