"""Inner solvers for one outer step ``int b(x, Du) . D phi = rhs(phi)``."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import P1Function, assemble_flux, assemble_jacobian, boundary_dof_mask
from .fields import StructureField
from .quadrature import QuadratureRule

log = logging.getLogger(__name__)

# systems up to this many dofs are factorized; larger ones use Krylov methods
DIRECT_LIMIT = 60_000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: list | None = None):
        super().__init__(message)
        self.history = history or []


@dataclass
class StepConfig:
    linear_tol: float = 1e-12
    newton_tol: float = 1e-11
    max_newton: int = 50
    backtrack: float = 0.5
    min_step: float = 2.0**-30
    max_linear_iter: int = 20000
    linear_method: str = "auto"  # auto | direct | cg

    def __post_init__(self):
        if self.linear_tol <= 0 or self.newton_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be at least 1")
        if not 0 < self.backtrack < 1 or not 0 < self.min_step < 1:
            raise ValueError("backtrack and min_step must lie in (0, 1)")
        if self.linear_method not in ("auto", "direct", "cg"):
            raise ValueError(f"unknown linear_method {self.linear_method!r}")


@dataclass
class StepStats:
    newton_iterations: int = 0
    linear_solves: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


def _use_direct(n: int, cfg: StepConfig) -> bool:
    return cfg.linear_method == "direct" or (cfg.linear_method == "auto" and n <= DIRECT_LIMIT)


def solve_linear_spd(matrix, rhs: np.ndarray, cfg: StepConfig | None = None, x0: np.ndarray | None = None) -> np.ndarray:
    """Solve an SPD system to relative residual ``cfg.linear_tol``.

    Diagonally preconditioned CG is the reference behaviour; small systems
    may be factorized directly when ``cfg.linear_method`` allows it.
    """
    cfg = cfg or StepConfig()
    rhs = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    A = sp.csr_matrix(matrix)
    if cfg.linear_method == "direct":
        return spla.spsolve(A.tocsc(), rhs)
    d = A.diagonal()
    if np.any(d <= 0):
        raise np.linalg.LinAlgError("matrix has a nonpositive diagonal entry; not SPD")
    M = sp.diags(1.0 / d)
    x, info = spla.cg(A, rhs, x0=x0, rtol=cfg.linear_tol, atol=0.0, maxiter=cfg.max_linear_iter, M=M)
    res = np.linalg.norm(A @ x - rhs)
    if info != 0 and res > cfg.linear_tol * bnorm * 10:
        raise ConvergenceError(f"CG did not converge (info={info}, relative residual {res / bnorm:.3e})")
    return x


class _Factorized:
    """Reusable solver for a fixed matrix (factorization or CG)."""

    def __init__(self, A: sp.csr_matrix, cfg: StepConfig, symmetric: bool):
        self.A = A
        self.cfg = cfg
        self.symmetric = symmetric
        self.lu = spla.splu(A.tocsc()) if _use_direct(A.shape[0], cfg) else None

    def solve(self, rhs: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        if self.lu is not None:
            return self.lu.solve(rhs)
        if self.symmetric:
            return solve_linear_spd(self.A, rhs, self.cfg, x0)
        return _solve_general(self.A, rhs, self.cfg, x0)


def _solve_general(A, rhs, cfg: StepConfig, x0=None) -> np.ndarray:
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    if _use_direct(A.shape[0], cfg):
        return spla.spsolve(sp.csc_matrix(A), rhs)
    ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-5, fill_factor=20)
    M = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.gmres(A, rhs, x0=x0, rtol=cfg.linear_tol, atol=0.0, restart=200, maxiter=cfg.max_linear_iter, M=M)
    if info != 0 and np.linalg.norm(A @ x - rhs) > 10 * cfg.linear_tol * bnorm:
        raise ConvergenceError(f"GMRES did not converge (info={info})")
    return x


def solve_sparse(A, rhs, cfg: StepConfig | None = None, symmetric: bool = False, x0=None) -> np.ndarray:
    cfg = cfg or StepConfig()
    if symmetric:
        if _use_direct(A.shape[0], cfg):
            return spla.spsolve(sp.csc_matrix(A), rhs)
        return solve_linear_spd(A, rhs, cfg, x0)
    return _solve_general(A, rhs, cfg, x0)


class StepSolver:
    """Solves ``int b(x, Du) . D phi = rhs`` repeatedly for one reference field.

    For linear ``b`` the stiffness matrix is assembled and factorized once,
    so each step costs exactly one linear solve.
    """

    def __init__(self, b: StructureField, mesh, components: int, cfg: StepConfig | None = None, quad: QuadratureRule | None = None):
        self.b = b
        self.mesh = mesh
        self.N = components
        self.cfg = cfg or StepConfig()
        self.quad = quad
        self._linear = None
        self.mask = boundary_dof_mask(mesh, components)

    def _linear_solver(self) -> _Factorized:
        if self._linear is None:
            A = assemble_jacobian(self.b, P1Function.zeros(self.mesh, self.N), self.quad)
            self._linear = _Factorized(A, self.cfg, self.b.meta.symmetric_jacobian)
        return self._linear

    def residual(self, u: P1Function, rhs: np.ndarray) -> np.ndarray:
        return assemble_flux(self.b, u, self.quad) - rhs

    def solve(self, rhs: np.ndarray, guess: P1Function | None = None) -> tuple[P1Function, StepStats]:
        rhs = np.array(rhs, dtype=float)
        rhs[self.mask] = 0.0
        if self.b.meta.linear:
            x0 = None if guess is None else guess.dofs.copy()
            x = self._linear_solver().solve(rhs, x0)
            x[self.mask] = 0.0
            u = P1Function.from_dofs(self.mesh, x, self.N)
            stats = StepStats(0, 1, float(np.linalg.norm(self.residual(u, rhs))))
            return u, stats
        return self._newton(rhs, guess)

    def _newton(self, rhs, guess) -> tuple[P1Function, StepStats]:
        cfg = self.cfg
        u = P1Function.zeros(self.mesh, self.N) if guess is None else guess.copy()
        u.dofs[self.mask] = 0.0
        r = self.residual(u, rhs)
        rn = float(np.linalg.norm(r))
        stats = StepStats(history=[rn])
        for it in range(cfg.max_newton + 1):
            floor = 1e3 * np.finfo(float).eps * (np.linalg.norm(rhs) + np.linalg.norm(assemble_flux(self.b, u, self.quad)))
            if rn <= max(cfg.newton_tol, floor):
                stats.residual = rn
                return u, stats
            if it == cfg.max_newton:
                break
            J = assemble_jacobian(self.b, u, self.quad)
            du = solve_sparse(J, -r, cfg, symmetric=self.b.meta.symmetric_jacobian)
            stats.linear_solves += 1
            du[self.mask] = 0.0
            t = 1.0
            while True:
                trial = P1Function.from_dofs(self.mesh, u.dofs + t * du, self.N)
                rt = self.residual(trial, rhs)
                rtn = float(np.linalg.norm(rt))
                if rtn <= (1.0 - 1e-4 * t) * rn:
                    break
                t *= cfg.backtrack
                if t < cfg.min_step:
                    raise ConvergenceError(f"Newton line search stalled at residual {rn:.3e}", stats.history)
            u, r, rn = trial, rt, rtn
            stats.newton_iterations += 1
            stats.history.append(rn)
        raise ConvergenceError(f"Newton did not reach {cfg.newton_tol:g} in {cfg.max_newton} steps (residual {rn:.3e})", stats.history)


def solve_step(b: StructureField, rhs: np.ndarray, guess: P1Function, cfg: StepConfig | None = None, quad: QuadratureRule | None = None) -> P1Function:
    """One-off solve of ``int b(x, Du) . D phi = rhs`` (dof vector, g = 0)."""
    solver = StepSolver(b, guess.mesh, guess.components, cfg, quad)
    u, _ = solver.solve(rhs, guess)
    return u
