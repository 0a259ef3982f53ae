"""The two three-dimensional test problems: a nonsymmetric linear system with
a known solution and a quartic-growth nonlinear system."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .fem import P1Function, PowerReaction, error_h1, norm
from .fields import identity_field, linear_field, quartic_field
from .iteration import IterationTrace, Problem, iterate, multilevel, solve_direct
from .mesh import unit_cube_mesh
from .solvers import StepConfig

LINEAR_MATRIX = np.array([[1.0, 1.0, 2.0], [0.0, 2.0, 3.0], [0.0, 0.0, 1.0]])
NONLINEAR_MATRIX = np.array([[1.0, 3.0, 5.0], [0.0, 2.0, 4.0], [0.0, 0.0, 1.0]])
TWO_PI = 2.0 * math.pi

# published H1 errors of the linear test at h = 2^-1 .. 2^-5
REFERENCE_ERRORS = {1: 6.6924, 2: 5.3767, 3: 3.2456, 4: 1.6786, 5: 0.8436}


def exact_scalar(x):
    return np.sin(TWO_PI * x[..., 0]) * np.sin(TWO_PI * x[..., 1]) * np.sin(TWO_PI * x[..., 2])


def _v(x):
    s = [np.sin(TWO_PI * x[..., k]) for k in range(3)]
    c = [np.cos(TWO_PI * x[..., k]) for k in range(3)]
    return np.stack([c[0] * s[1] * s[2], s[0] * c[1] * s[2], s[0] * s[1] * c[2]], axis=-1)


def linear_exact(x):
    return np.repeat(exact_scalar(x)[..., None], 3, axis=-1)


def linear_exact_grad(x):
    return TWO_PI * np.repeat(_v(x)[..., None, :], 3, axis=-2)


def linear_flux(x):
    """``f = A Du`` for the exact solution, i.e. ``f_{alpha i} = (8 pi, 10 pi, 2 pi)_alpha v_i``."""
    return np.einsum("ab,...bi->...ai", LINEAR_MATRIX, linear_exact_grad(x))


def exact_h1_norm() -> float:
    return math.sqrt(3.0 * (1.0 / 8.0 + 3.0 * math.pi**2 / 2.0))


def error_degree(level: int) -> int:
    """Quadrature degree for errors against the trigonometric solution.

    Coarse elements span half a period of the sine, so low levels need
    higher degree before the integral saturates.
    """
    return {0: 24, 1: 20, 2: 8}.get(level, 5)


def linear_problem(level: int, gamma: float | str = 2.0 / 3.0) -> Problem:
    return Problem(
        mesh=unit_cube_mesh(3, level), a=linear_field(LINEAR_MATRIX), b=identity_field(), components=3,
        flux_rhs=linear_flux, gamma=gamma, p=2.0,
    )


@dataclass
class LinearRow:
    level: int
    h: float
    gamma: float
    error_h1: float
    iterations: int
    converged: bool
    seconds: float


def run_linear(levels, gamma: float = 2.0 / 3.0, tol: float = 1e-9, max_iter: int = 1000, cfg: StepConfig | None = None):
    """Linear test on each level; returns rows, final iterates and traces."""
    rows, sols, traces = [], [], []
    for i in levels:
        t0 = time.perf_counter()
        u, tr = iterate(linear_problem(i, gamma), tol=tol, max_iter=max_iter, cfg=cfg, allow_inadmissible=True)
        err = error_h1(u, linear_exact, linear_exact_grad, error_degree(i))
        rows.append(LinearRow(i, 2.0**-i, float(gamma), err, tr.iterations, tr.converged, time.perf_counter() - t0))
        sols.append(u)
        traces.append(tr)
    return rows, sols, traces


# --------------------------------------------------------------------------


def nonlinear_source(x):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([Y, X * X, Z * Z + X * X], axis=-1)


def nonlinear_problem(level: int, gamma: float | str = 0.65) -> Problem:
    return Problem(
        mesh=unit_cube_mesh(3, level), a=quartic_field(NONLINEAR_MATRIX), b=quartic_field(), components=3,
        source=nonlinear_source, reaction=PowerReaction(4.0), gamma=gamma, p=6.0,
    )


@dataclass
class NonlinearResult:
    level: int
    trace: IterationTrace
    distances: list  # ||u_dir - u_n||_{H1} per outer step
    final_distance: float
    direct_newton_steps: int
    solution: P1Function
    direct: P1Function


def run_nonlinear(level: int, gamma: float = 0.65, tol: float = 1e-9, max_iter: int = 500, cfg: StepConfig | None = None) -> NonlinearResult:
    """Outer iteration vs a direct damped-Newton solve of the same discrete problem."""
    prob = nonlinear_problem(level, gamma)
    u_dir, hist = solve_direct(prob, cfg=cfg)
    dists = []

    def record(n, u, trace):
        dists.append(norm(u - u_dir, "H1"))

    u, tr = iterate(prob, tol=tol, max_iter=max_iter, cfg=cfg, allow_inadmissible=True, callback=record)
    return NonlinearResult(level, tr, dists, dists[-1] if dists else math.nan, len(hist) - 1, u, u_dir)


def multilevel_tolerance(level: int) -> float:
    return 10.0 ** -(level + 4)


def run_multilevel(k0: int, k_max: int, gamma: float = 0.65, cfg: StepConfig | None = None, max_iter: int = 500):
    prob = nonlinear_problem(k0, gamma)
    return multilevel(prob, k_max, multilevel_tolerance, cfg=cfg, max_iter=max_iter, allow_inadmissible=True)


# --------------------------------------------------------------------------
# smooth manufactured solution for mesh-convergence orders


def smooth_exact(x):
    s = np.prod(np.sin(math.pi * x), axis=-1)
    return np.repeat(s[..., None], 3, axis=-1)


def smooth_exact_grad(x):
    s = np.sin(math.pi * x)
    c = np.cos(math.pi * x)
    d = x.shape[-1]
    g = np.stack([math.pi * c[..., k] * np.prod(np.delete(s, k, axis=-1), axis=-1) for k in range(d)], axis=-1)
    return np.repeat(g[..., None, :], 3, axis=-2)


def smooth_problem(level: int, dim: int = 3, gamma: float | str = "auto") -> Problem:
    """``a = b = identity`` with ``f = Du`` for ``u = sin(pi x) sin(pi y) [sin(pi z)] (1, 1, 1)``."""
    ident = identity_field()
    return Problem(mesh=unit_cube_mesh(dim, level), a=ident, b=ident, components=3, flux_rhs=smooth_exact_grad, gamma=gamma, p=2.0)


def observed_orders(levels, tol: float = 1e-10, dim: int = 3) -> tuple[list, list]:
    """H1 errors of the iteration's limit on each level and the orders between successive levels."""
    errs = []
    for i in levels:
        u, _ = iterate(smooth_problem(i, dim), tol=tol)
        errs.append(error_h1(u, smooth_exact, smooth_exact_grad, max(error_degree(i), 5)))
    orders = [math.log2(e0 / e1) for e0, e1 in zip(errs, errs[1:])]
    return errs, orders
