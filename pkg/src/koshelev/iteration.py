"""The outer fixed-point iteration, its trace, the a-posteriori estimator and
the multilevel driver.

Each step solves ``int b(x, Du_{n+1}) . D phi = int (b(x, Du_n) - gamma a(x, Du_n) + gamma f) . D phi``
(plus the optional source and reaction terms of ``a``'s residual).
"""
from __future__ import annotations

import csv
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .constants import ConstantsReport, kab_for_fields
from .fem import P1Function, assemble_flux, assemble_jacobian, assemble_residual, boundary_dof_mask, norm
from .fields import StructureField
from .mesh import SimplicialMesh, prolong, refine
from .quadrature import QuadratureRule
from .solvers import ConvergenceError, StepConfig, StepSolver, solve_sparse

log = logging.getLogger(__name__)


class InadmissibleError(RuntimeError):
    def __init__(self, message: str, report: ConstantsReport | None = None):
        super().__init__(message)
        self.report = report


class IterationError(RuntimeError):
    def __init__(self, message: str, step: int, trace: "IterationTrace"):
        super().__init__(message)
        self.step = step
        self.trace = trace


@dataclass
class Problem:
    """Discrete problem ``-div a(x, Du) + r(u) = -div f + s`` with ``u = 0`` on the boundary."""

    mesh: SimplicialMesh
    a: StructureField
    b: StructureField
    components: int = 3
    flux_rhs: Callable | None = None
    source: Callable | None = None
    reaction: Callable | None = None
    gamma: float | str = "auto"
    p: float | None = None
    quad: QuadratureRule | None = None

    def __post_init__(self):
        if self.p is None:
            self.p = self.b.meta.p
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        if self.gamma != "auto" and not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise ValueError(f"gamma must be positive or 'auto', got {self.gamma!r}")
        for f in (self.a, self.b):
            if f.components is not None and f.components != self.components:
                raise ValueError(f"field {f.meta.name} has N={f.components}, problem has N={self.components}")

    def a_residual(self, u: P1Function) -> np.ndarray:
        return assemble_residual(self.a, u, self.flux_rhs, self.source, self.quad, self.reaction)

    def on_mesh(self, mesh: SimplicialMesh) -> "Problem":
        return replace(self, mesh=mesh)


@dataclass(frozen=True)
class StepRecord:
    n: int
    diff: float  # ||u_{n} - u_{n-1}||_{W^{1,p}}
    ratio: float
    aposteriori: float
    grad_lp: float  # ||D u_n||_{L^p}
    lq_norms: tuple
    inner_iterations: int
    linear_solves: int


@dataclass
class IterationTrace:
    """Append-only record of an outer run; ``snapshot()`` is safe from other threads."""

    gamma: float
    p: float
    lq: tuple = ()
    level: int | None = None
    report: ConstantsReport | None = None
    converged: bool = False
    _steps: list = field(default_factory=list, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def append(self, rec: StepRecord):
        with self._lock:
            self._steps.append(rec)

    def snapshot(self) -> tuple:
        with self._lock:
            return tuple(self._steps)

    @property
    def steps(self) -> tuple:
        return self.snapshot()

    def __len__(self):
        return len(self.snapshot())

    @property
    def diffs(self) -> np.ndarray:
        return np.array([s.diff for s in self.snapshot()])

    @property
    def iterations(self) -> int:
        return len(self)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self._write(fh)

    def _write(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "diff_W1p", "ratio", "aposteriori", *[f"lq_{q:g}" for q in self.lq], "inner_iterations"])
        for s in self.snapshot():
            w.writerow([s.n, _g(s.diff), _g(s.ratio), _g(s.aposteriori), *[_g(v) for v in s.lq_norms], s.inner_iterations])


def _g(v: float) -> str:
    return f"{v:.17g}"


def aposteriori(u_n: P1Function, u_prev: P1Function, p: float) -> float:
    """``||D(u_n - u_prev)||_{L^p}^(2/max(2,p))``, the estimator without its constant."""
    d = norm(u_n - u_prev, "W1p_semi", p)
    return d ** (2.0 / max(2.0, p))


def rate_estimate(trace) -> float:
    """Geometric mean of successive difference ratios over the tail half."""
    diffs = trace.diffs if isinstance(trace, IterationTrace) else np.asarray(trace, dtype=float)
    diffs = diffs[diffs > 0]
    if len(diffs) < 3:
        raise ValueError("rate_estimate needs at least three nonzero differences")
    k = max(1, (len(diffs) - 1) // 2)
    tail = diffs[-(k + 1) :]
    return float((tail[-1] / tail[0]) ** (1.0 / k))


def resolve_gamma(problem: Problem, allow_inadmissible: bool = False) -> tuple[float, ConstantsReport | None]:
    """Return the relaxation parameter and, when computable, the constants report."""
    try:
        report = kab_for_fields(problem.a, problem.b)
    except ValueError as exc:
        report = None
        reason = str(exc)
    else:
        reason = "; ".join(report.notes) or f"rate R = {report.rate_R:.4g}"
    if problem.gamma == "auto":
        if report is None or not report.admissible:
            if not allow_inadmissible:
                raise InadmissibleError(f"pair (a, b) is not admissible for automatic gamma: {reason}", report)
            if report is None or not math.isfinite(report.gamma_star):
                raise InadmissibleError(f"no automatic gamma available: {reason}", report)
        return report.gamma_star, report
    if report is None or not report.admissible:
        log.warning("gamma=%g chosen by hand for a pair without a contraction guarantee (%s)", problem.gamma, reason)
    return float(problem.gamma), report


def iterate(
    problem: Problem,
    u0: P1Function | None = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
    *,
    lq: Sequence[float] = (),
    cfg: StepConfig | None = None,
    allow_inadmissible: bool = False,
    callback: Callable | None = None,
    trace: IterationTrace | None = None,
) -> tuple[P1Function, IterationTrace]:
    """Run the outer iteration until ``||u_{n+1} - u_n||_{W^{1,p}} <= tol``."""
    if tol <= 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    gamma, report = resolve_gamma(problem, allow_inadmissible)
    mesh, N, p = problem.mesh, problem.components, problem.p
    u = P1Function.zeros(mesh, N) if u0 is None else u0.copy()
    if u.mesh is not mesh and u.mesh.n_vertices != mesh.n_vertices:
        raise ValueError("initial guess lives on a different mesh")
    u.dofs[boundary_dof_mask(mesh, N)] = 0.0
    trace = trace or IterationTrace(gamma=gamma, p=p, lq=tuple(lq), level=mesh.level, report=report)
    solver = StepSolver(problem.b, mesh, N, cfg, problem.quad)
    prev_diff = math.nan
    for n in range(1, max_iter + 1):
        rhs = assemble_flux(problem.b, u, problem.quad) - gamma * problem.a_residual(u)
        try:
            u_new, stats = solver.solve(rhs, u)
        except ConvergenceError as exc:
            raise IterationError(f"inner solve failed at outer step {n}: {exc}", n, trace) from exc
        delta = u_new - u
        diff = norm(delta, "W1p", p)
        est = norm(delta, "W1p_semi", p) ** (2.0 / max(2.0, p))
        grad_lp = norm(u_new, "W1p_semi", p)
        lqs = tuple(norm(u_new, "Lq_grad", q) for q in lq)
        ratio = diff / prev_diff if prev_diff > 0 else math.nan
        trace.append(StepRecord(n, diff, ratio, est, grad_lp, lqs, stats.newton_iterations, stats.linear_solves))
        if callback is not None:
            callback(n, u_new, trace)
        u, prev_diff = u_new, diff
        if diff <= tol:
            trace.converged = True
            break
    return u, trace


def multilevel(
    problem: Problem,
    k_max: int,
    tols: Sequence[float] | Callable[[int], float],
    *,
    u0: P1Function | None = None,
    max_iter: int = 1000,
    cfg: StepConfig | None = None,
    allow_inadmissible: bool = False,
) -> tuple[P1Function, list]:
    """Iterate on nested levels ``k0..k_max``, warm-starting each level from
    the prolonged last iterate of the previous one."""
    k0 = problem.mesh.level
    if k0 is None or k_max < k0:
        raise ValueError("need a structured start mesh with level <= k_max")
    levels = list(range(k0, k_max + 1))
    tol_seq = [tols(k) for k in levels] if callable(tols) else list(tols)
    if len(tol_seq) != len(levels):
        raise ValueError(f"need {len(levels)} tolerances, got {len(tol_seq)}")
    if any(t2 > t1 for t1, t2 in zip(tol_seq, tol_seq[1:])):
        raise ValueError("tolerances must be nonincreasing")
    traces = []
    u = u0
    prob = problem
    for i, (k, tol) in enumerate(zip(levels, tol_seq)):
        if i > 0:
            prob = prob.on_mesh(refine(prob.mesh))
            u = prolong(u, prob.mesh)
        u, tr = iterate(prob, u, tol, max_iter, cfg=cfg, allow_inadmissible=allow_inadmissible)
        traces.append(tr)
    return u, traces


def solve_direct(problem: Problem, u0: P1Function | None = None, cfg: StepConfig | None = None) -> tuple[P1Function, list]:
    """Damped Newton on the full discrete problem ``a_residual(u) = 0``.

    Independent of the outer iteration; used as the reference solution.
    Returns the solution and the residual-norm history.
    """
    cfg = cfg or StepConfig()
    mesh, N = problem.mesh, problem.components
    mask = boundary_dof_mask(mesh, N)
    u = P1Function.zeros(mesh, N) if u0 is None else u0.copy()
    u.dofs[mask] = 0.0
    r = problem.a_residual(u)
    rn = float(np.linalg.norm(r))
    history = [rn]
    for _ in range(cfg.max_newton):
        floor = 1e3 * np.finfo(float).eps * float(np.linalg.norm(assemble_flux(problem.a, u, problem.quad)) + 1.0)
        if rn <= max(cfg.newton_tol, floor):
            return u, history
        J = assemble_jacobian(problem.a, u, problem.quad, problem.reaction)
        du = solve_sparse(J, -r, cfg, symmetric=False)
        du[mask] = 0.0
        t = 1.0
        while True:
            trial = P1Function.from_dofs(mesh, u.dofs + t * du, N)
            rt = problem.a_residual(trial)
            rtn = float(np.linalg.norm(rt))
            if rtn <= (1.0 - 1e-4 * t) * rn:
                break
            t *= cfg.backtrack
            if t < cfg.min_step:
                raise ConvergenceError(f"direct Newton line search stalled at residual {rn:.3e}", history)
        u, r, rn = trial, rt, rtn
        history.append(rn)
    floor = 1e3 * np.finfo(float).eps * float(np.linalg.norm(assemble_flux(problem.a, u, problem.quad)) + 1.0)
    if rn <= max(cfg.newton_tol, floor):
        return u, history
    raise ConvergenceError(f"direct Newton did not converge (residual {rn:.3e})", history)
