"""Vector-valued P1 finite elements: functions, assembly and norms.

Degrees of freedom are interleaved: component ``alpha`` at vertex ``v`` is
entry ``v * N + alpha``.  Boundary (Dirichlet, g = 0) rows of residual
vectors are zeroed and the matching rows/columns of assembled matrices are
replaced by the identity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fields import StructureField
from .mesh import SimplicialMesh
from .parallel import ordered_map
from .quadrature import QuadratureRule, quadrature_rule

# elements per assembly chunk; fixed so results do not depend on thread count
CHUNK = 32768
ASSEMBLY_DEGREE = 2
ERROR_DEGREE = 5


def _chunks(n: int):
    return [slice(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def _map_chunks(fn, n: int) -> list:
    return ordered_map(fn, _chunks(n))


class P1Function:
    """Continuous piecewise-linear map ``Omega -> R^N`` given by vertex values."""

    def __init__(self, mesh: SimplicialMesh, values):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(mesh.n_vertices, -1)
        if values.shape[0] != mesh.n_vertices:
            raise ValueError(f"expected {mesh.n_vertices} vertex rows, got {values.shape[0]}")
        self.mesh = mesh
        self.values = values

    @property
    def components(self) -> int:
        return self.values.shape[1]

    @property
    def dofs(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def zeros(cls, mesh: SimplicialMesh, components: int) -> "P1Function":
        return cls(mesh, np.zeros((mesh.n_vertices, components)))

    @classmethod
    def from_dofs(cls, mesh: SimplicialMesh, dofs: np.ndarray, components: int) -> "P1Function":
        return cls(mesh, np.asarray(dofs, dtype=float).reshape(mesh.n_vertices, components))

    def copy(self) -> "P1Function":
        return P1Function(self.mesh, self.values.copy())

    def __sub__(self, other: "P1Function") -> "P1Function":
        _same_mesh(self, other)
        return P1Function(self.mesh, self.values - other.values)

    def __add__(self, other: "P1Function") -> "P1Function":
        _same_mesh(self, other)
        return P1Function(self.mesh, self.values + other.values)

    def __mul__(self, c: float) -> "P1Function":
        return P1Function(self.mesh, c * self.values)

    __rmul__ = __mul__

    def __repr__(self):
        return f"P1Function(N={self.components}, {self.mesh!r})"


def _same_mesh(u: P1Function, v: P1Function):
    if u.mesh is not v.mesh and (u.mesh.vertices.shape != v.mesh.vertices.shape or u.mesh.level != v.mesh.level):
        raise ValueError("functions live on different meshes")


def boundary_dof_mask(mesh: SimplicialMesh, components: int) -> np.ndarray:
    return np.repeat(mesh.boundary_mask, components)


def interpolate(func: Callable[[np.ndarray], np.ndarray], mesh: SimplicialMesh) -> P1Function:
    """Nodal interpolant of ``func``, which maps points ``(k, dim)`` to ``(k, N)``."""
    vals = np.asarray(func(mesh.vertices), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return P1Function(mesh, vals)


def element_gradients(fn: P1Function, simplices=slice(None)) -> np.ndarray:
    """Constant gradients ``(ne, N, dim)`` of each component on each simplex."""
    mesh = fn.mesh
    U = fn.values[mesh.simplices[simplices]]
    return np.einsum("evN,evd->eNd", U, mesh.barycentric_gradients[simplices])


def _quad(mesh: SimplicialMesh, quad: QuadratureRule | None, degree: int = ASSEMBLY_DEGREE) -> QuadratureRule:
    quad = quad or quadrature_rule(mesh.dim, degree)
    if quad.dim != mesh.dim:
        raise ValueError("quadrature rule dimension does not match mesh")
    return quad


@dataclass(frozen=True)
class PowerReaction:
    """Lower-order term ``r(u) = |u|^q u`` added to the residual as ``int r(u) . phi``."""

    q: float = 4.0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        s = np.sum(u * u, axis=-1)
        return np.power(s, self.q / 2.0)[..., None] * u

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        s = np.sum(u * u, axis=-1)
        N = u.shape[-1]
        J = np.power(s, self.q / 2.0)[..., None, None] * np.eye(N)
        if self.q != 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(s > 0, self.q * np.power(np.where(s > 0, s, 1.0), self.q / 2.0 - 1.0), 0.0)
            J = J + c[..., None, None] * u[..., :, None] * u[..., None, :]
        return J


def _field_at_quadrature(field: StructureField, fn: P1Function, quad: QuadratureRule, sl, jac: bool):
    """Field values (or Jacobians) averaged with the quadrature weights per element."""
    mesh = fn.mesh
    Du = element_gradients(fn, sl)
    w = quad.unit_weights
    if not field.meta.x_dependent:
        x = mesh.map_points(np.full((1, mesh.dim + 1), 1.0 / (mesh.dim + 1)), sl)[:, 0]
        return field.jacobian(x, Du) if jac else field(x, Du)
    x = mesh.map_points(quad.points, sl)
    Dq = np.broadcast_to(Du[:, None], (Du.shape[0], len(w), *Du.shape[1:]))
    vals = field.jacobian(x, Dq) if jac else field(x, Dq)
    return np.einsum("q,eq...->e...", w, vals)


def _scatter_vector(mesh: SimplicialMesh, N: int, sl, local: np.ndarray) -> np.ndarray:
    # local: (ne, dim+1, N)
    idx = (mesh.simplices[sl][:, :, None] * N + np.arange(N)).ravel()
    return np.bincount(idx, weights=local.ravel(), minlength=mesh.n_vertices * N)


def _reduce(parts: list, size: int) -> np.ndarray:
    out = np.zeros(size)
    for p in parts:
        out += p
    return out


def assemble_flux(field: StructureField, fn: P1Function, quad: QuadratureRule | None = None) -> np.ndarray:
    """``int field(x, D fn) . D phi_i`` for all dofs, boundary rows zeroed."""
    return assemble_residual(field, fn, None, None, quad)


def assemble_residual(
    field: StructureField | None,
    fn: P1Function,
    flux_rhs: Callable | None = None,
    source_rhs: Callable | None = None,
    quad: QuadratureRule | None = None,
    reaction: Callable | None = None,
) -> np.ndarray:
    """``int field(x,Du).Dphi + r(u).phi - flux_rhs.Dphi - source_rhs.phi``.

    ``flux_rhs`` maps points ``(..., dim)`` to ``(..., N, dim)`` and
    ``source_rhs`` maps them to ``(..., N)``.  Boundary rows are zeroed.
    """
    mesh = fn.mesh
    N = fn.components
    quad = _quad(mesh, quad)
    w = quad.unit_weights
    need_x = flux_rhs is not None or source_rhs is not None or reaction is not None

    def work(sl):
        vol = mesh.volumes[sl]
        G = mesh.barycentric_gradients[sl]
        flux = np.zeros((G.shape[0], N, mesh.dim))
        if field is not None:
            flux += _field_at_quadrature(field, fn, quad, sl, jac=False)
        x = mesh.map_points(quad.points, sl) if need_x else None
        if flux_rhs is not None:
            flux -= np.einsum("q,eqai->eai", w, np.asarray(flux_rhs(x), dtype=float))
        local = vol[:, None, None] * np.einsum("eai,evi->eva", flux, G)
        if source_rhs is not None or reaction is not None:
            mass_load = np.zeros((G.shape[0], len(w), N))
            if source_rhs is not None:
                mass_load -= np.asarray(source_rhs(x), dtype=float)
            if reaction is not None:
                uq = np.einsum("qk,ekN->eqN", quad.points, fn.values[mesh.simplices[sl]])
                mass_load += reaction(uq)
            local += vol[:, None, None] * np.einsum("q,qv,eqa->eva", w, quad.points, mass_load)
        return _scatter_vector(mesh, N, sl, local)

    r = _reduce(_map_chunks(work, mesh.n_simplices), mesh.n_vertices * N)
    r[boundary_dof_mask(mesh, N)] = 0.0
    return r


def assemble_jacobian(
    field: StructureField,
    fn: P1Function,
    quad: QuadratureRule | None = None,
    reaction: Callable | None = None,
    symmetrize: bool = False,
) -> sp.csr_matrix:
    """``int d_z field(x,Du)[D phi_j] . D phi_i`` (+ reaction mass term).

    Boundary rows and columns are replaced by the identity.
    """
    mesh = fn.mesh
    N = fn.components
    d = mesh.dim
    quad = _quad(mesh, quad)
    w = quad.unit_weights
    mask = boundary_dof_mask(mesh, N)
    nloc = (d + 1) * N

    def work(sl):
        vol = mesh.volumes[sl]
        G = mesh.barycentric_gradients[sl]
        J = _field_at_quadrature(field, fn, quad, sl, jac=True).reshape(-1, N, d, N, d)
        K = vol[:, None, None, None, None] * np.einsum("eaibj,evi,ewj->evawb", J, G, G)
        if reaction is not None:
            uq = np.einsum("qk,ekN->eqN", quad.points, fn.values[mesh.simplices[sl]])
            R = reaction.jacobian(uq)
            K += vol[:, None, None, None, None] * np.einsum("q,qv,qw,eqab->evawb", w, quad.points, quad.points, R)
        dof = (mesh.simplices[sl][:, :, None] * N + np.arange(N)).reshape(-1, nloc)
        rows = np.repeat(dof, nloc, axis=1).ravel()
        cols = np.tile(dof, (1, nloc)).ravel()
        data = K.reshape(-1, nloc * nloc).ravel()
        keep = ~(mask[rows] | mask[cols])
        return rows[keep], cols[keep], data[keep]

    parts = _map_chunks(work, mesh.n_simplices)
    bnd = np.flatnonzero(mask)
    rows = np.concatenate([p[0] for p in parts] + [bnd])
    cols = np.concatenate([p[1] for p in parts] + [bnd])
    data = np.concatenate([p[2] for p in parts] + [np.ones(len(bnd))])
    n = mesh.n_vertices * N
    A = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    if symmetrize:
        A = (0.5 * (A + A.T)).tocsr()
    return A


def stiffness_matrix(mesh: SimplicialMesh, components: int) -> sp.csr_matrix:
    """Vector Laplacian (identity field Jacobian) with Dirichlet conditioning."""
    from .fields import identity_field

    return assemble_jacobian(identity_field(), P1Function.zeros(mesh, components))


# --------------------------------------------------------------------------
# norms

NORM_KINDS = ("Lp", "W1p_semi", "W1p", "H1", "Lq_grad", "Lq_grad_weighted")


def _lp_values(fn: P1Function, p: float, quad: QuadratureRule) -> float:
    mesh = fn.mesh
    w = quad.unit_weights

    def work(sl):
        uq = np.einsum("qk,ekN->eqN", quad.points, fn.values[mesh.simplices[sl]])
        mag = np.sqrt(np.sum(uq * uq, axis=-1))
        return float(np.sum(mesh.volumes[sl] * (np.power(mag, p) @ w)))

    return sum(_map_chunks(work, mesh.n_simplices))


def _grad_power(fn: P1Function, q: float, weight=None, quad=None) -> float:
    mesh = fn.mesh

    def work(sl):
        Du = element_gradients(fn, sl)
        mag = np.power(np.sqrt(np.sum(Du * Du, axis=(-2, -1))), q)
        if weight is None:
            return float(np.sum(mesh.volumes[sl] * mag))
        x = mesh.map_points(quad.points, sl)
        wx = np.asarray(weight(x), dtype=float) @ quad.unit_weights
        return float(np.sum(mesh.volumes[sl] * wx * mag))

    return sum(_map_chunks(work, mesh.n_simplices))


def norm(fn: P1Function, kind: str, p: float = 2.0, quad: QuadratureRule | None = None, weight: Callable | None = None) -> float:
    """Norms of a P1 function.

    ``kind`` is one of ``Lp``, ``W1p_semi``, ``W1p``, ``H1``, ``Lq_grad``,
    ``Lq_grad_weighted``; ``p`` doubles as the exponent ``q`` for the
    gradient norms.  Gradient parts are exact (piecewise constant), value
    parts use ``quad`` (default degree 2, exact for ``L^2``).
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    if p < 1:
        raise ValueError("exponent must be at least 1")
    if kind == "H1":
        kind, p = "W1p", 2.0
    quad = _quad(fn.mesh, quad)
    if kind == "Lp":
        return _lp_values(fn, p, quad) ** (1.0 / p)
    if kind in ("W1p_semi", "Lq_grad"):
        return _grad_power(fn, p) ** (1.0 / p)
    if kind == "Lq_grad_weighted":
        if weight is None:
            raise ValueError("Lq_grad_weighted needs a weight")
        return _grad_power(fn, p, weight, quad) ** (1.0 / p)
    return (_lp_values(fn, p, quad) + _grad_power(fn, p)) ** (1.0 / p)


def error_h1(fn: P1Function, exact: Callable, exact_grad: Callable, degree: int = ERROR_DEGREE) -> float:
    """``||fn - u||_{H^1}`` by per-element quadrature of the given degree.

    ``exact`` maps points ``(..., dim)`` to ``(..., N)`` and ``exact_grad``
    to ``(..., N, dim)``.
    """
    mesh = fn.mesh
    quad = quadrature_rule(mesh.dim, degree)
    w = quad.unit_weights

    def work(sl):
        x = mesh.map_points(quad.points, sl)
        uq = np.einsum("qk,ekN->eqN", quad.points, fn.values[mesh.simplices[sl]])
        eu = uq - np.asarray(exact(x), dtype=float).reshape(uq.shape)
        Du = element_gradients(fn, sl)[:, None]
        eg = Du - np.asarray(exact_grad(x), dtype=float).reshape(*uq.shape, mesh.dim)
        dens = np.sum(eu * eu, axis=-1) + np.sum(eg * eg, axis=(-2, -1))
        return float(np.sum(mesh.volumes[sl] * (dens @ w)))

    return sum(_map_chunks(work, mesh.n_simplices)) ** 0.5


def write_solution(fn: P1Function, path) -> None:
    """Plain-text table ``x y [z] u1 ... uN`` with 17 significant digits."""
    mesh = fn.mesh
    names = ["x", "y", "z"][: mesh.dim] + [f"u{k + 1}" for k in range(fn.components)]
    np.savetxt(path, np.column_stack([mesh.vertices, fn.values]), fmt="%.17g", header=" ".join(names), comments="")


def read_solution(path, mesh: SimplicialMesh) -> P1Function:
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    if not np.allclose(data[:, : mesh.dim], mesh.vertices):
        raise ValueError("solution table does not match mesh vertices")
    return P1Function(mesh, data[:, mesh.dim :])
