"""Structured Kuhn triangulations of the unit square and cube.

Vertices sit on the tensor grid ``k * h`` with ``h = 2**-level``; the vertex
with grid index ``(k_0, ..., k_{d-1})`` has number ``sum_j k_j (m+1)**j``
(x fastest).  Every grid cell is split along its main diagonal into ``d!``
simplices, one per ordering of the axes.
"""
from __future__ import annotations

import itertools
import math
from functools import cached_property

import numpy as np

# refuse meshes whose simplex table alone would exceed this many entries
MAX_SIMPLEX_ENTRIES = 60_000_000


class MeshTooLargeError(MemoryError):
    pass


class NotNestedError(ValueError):
    pass


class SimplicialMesh:
    """Immutable simplicial mesh with cached element geometry."""

    def __init__(self, dim: int, vertices: np.ndarray, simplices: np.ndarray, level: int | None = None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        simplices = np.ascontiguousarray(simplices, dtype=np.int64)
        if dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {dim}")
        if vertices.ndim != 2 or vertices.shape[1] != dim:
            raise ValueError("vertices must have shape (nv, dim)")
        if simplices.ndim != 2 or simplices.shape[1] != dim + 1:
            raise ValueError("simplices must have shape (ne, dim+1)")
        vertices.setflags(write=False)
        simplices.setflags(write=False)
        self.dim = dim
        self.vertices = vertices
        self.simplices = simplices
        self.level = level

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_simplices(self) -> int:
        return len(self.simplices)

    @property
    def h(self) -> float:
        if self.level is None:
            raise ValueError("mesh has no structured level")
        return 2.0**-self.level

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        v = self.vertices
        on = np.any((v == 0.0) | (v == 1.0), axis=1)
        out = np.flatnonzero(on)
        out.setflags(write=False)
        return out

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def _edge_matrices(self) -> np.ndarray:
        X = self.vertices[self.simplices]
        return X[:, 1:, :] - X[:, :1, :]

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return np.linalg.det(self._edge_matrices) / math.factorial(self.dim)

    @cached_property
    def volumes(self) -> np.ndarray:
        vol = np.abs(self.signed_volumes)
        vol.setflags(write=False)
        return vol

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """``(ne, dim+1, dim)``: gradient of each hat function on each simplex."""
        M = self._edge_matrices
        G = np.empty((self.n_simplices, self.dim + 1, self.dim))
        G[:, 1:, :] = np.swapaxes(np.linalg.inv(M), -1, -2)
        G[:, 0, :] = -G[:, 1:, :].sum(axis=1)
        G.setflags(write=False)
        return G

    def map_points(self, bary: np.ndarray, simplices: slice | np.ndarray = slice(None)) -> np.ndarray:
        """Physical coordinates ``(ne, q, dim)`` of barycentric points ``(q, dim+1)``."""
        X = self.vertices[self.simplices[simplices]]
        return np.einsum("qk,ekd->eqd", bary, X)

    def shape_quality(self) -> float:
        """Minimum inradius / diameter over all simplices."""
        X = self.vertices[self.simplices]
        d = self.dim
        diam = np.zeros(self.n_simplices)
        for a, b in itertools.combinations(range(d + 1), 2):
            diam = np.maximum(diam, np.linalg.norm(X[:, a] - X[:, b], axis=1))
        # inradius = d * volume / total facet measure; facet measure = |grad lambda_k|^-1 * d * volume
        facet = d * self.volumes[:, None] * np.linalg.norm(self.barycentric_gradients, axis=2)
        inr = d * self.volumes / facet.sum(axis=1)
        return float((inr / diam).min())

    def __repr__(self):
        return f"SimplicialMesh(dim={self.dim}, level={self.level}, nv={self.n_vertices}, ne={self.n_simplices})"


def _kuhn_reference(dim: int) -> np.ndarray:
    """Simplices of the unit cell as vertex offsets ``(d!, d+1, d)``, positively oriented."""
    out = []
    for perm in itertools.permutations(range(dim)):
        path = [np.zeros(dim, dtype=np.int64)]
        for axis in perm:
            nxt = path[-1].copy()
            nxt[axis] = 1
            path.append(nxt)
        P = np.array(path)
        if np.linalg.det((P[1:] - P[0]).astype(float)) < 0:
            P[[0, 1]] = P[[1, 0]]
        out.append(P)
    return np.array(out)


def unit_cube_mesh(dim: int, level: int) -> SimplicialMesh:
    """Kuhn triangulation of ``[0,1]^dim`` with node spacing ``2**-level``."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if level < 0:
        raise ValueError("level must be nonnegative")
    m = 2**level
    n_cells = m**dim
    n_simp = n_cells * math.factorial(dim)
    if n_simp * (dim + 1) > MAX_SIMPLEX_ENTRIES:
        raise MeshTooLargeError(f"level {level} in {dim}-D needs {n_simp} simplices, above the memory budget")

    axis = np.arange(m + 1) / m
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    # x fastest: reverse the axis order before flattening
    vertices = np.stack([g.transpose(tuple(reversed(range(dim)))).ravel() for g in grids], axis=1)

    strides = (m + 1) ** np.arange(dim)
    cells = np.stack(np.meshgrid(*([np.arange(m)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    base = cells @ strides
    ref = _kuhn_reference(dim) @ strides
    simplices = (base[:, None, None] + ref[None, :, :]).reshape(-1, dim + 1)
    return SimplicialMesh(dim, vertices, simplices, level)


def refine(mesh: SimplicialMesh) -> SimplicialMesh:
    """Next structured level; the coarse vertex set is contained in the fine one."""
    if mesh.level is None:
        raise ValueError("only structured meshes can be refined")
    return unit_cube_mesh(mesh.dim, mesh.level + 1)


def grid_indices(mesh: SimplicialMesh) -> np.ndarray:
    """Integer grid coordinates ``(nv, dim)`` of a structured mesh."""
    m = 2**mesh.level
    return np.rint(mesh.vertices * m).astype(np.int64)


def prolongation_pairs(coarse: SimplicialMesh, fine: SimplicialMesh) -> tuple[np.ndarray, np.ndarray]:
    """For each fine vertex, two coarse vertices whose average gives its value.

    A fine vertex with grid index ``k`` lies at the midpoint of the coarse
    segment from ``floor(k/2)`` to ``ceil(k/2)``; that segment is a Kuhn
    edge (or a single vertex), so averaging reproduces P1 functions exactly.
    """
    if coarse.level is None or fine.level != coarse.level + 1 or fine.dim != coarse.dim:
        raise NotNestedError("fine mesh must be the uniform refinement of the coarse mesh")
    mc = 2**coarse.level
    if coarse.n_vertices != (mc + 1) ** coarse.dim or fine.n_vertices != (2 * mc + 1) ** fine.dim:
        raise NotNestedError("meshes are not structured unit-cube meshes")
    k = grid_indices(fine)
    strides = (mc + 1) ** np.arange(coarse.dim)
    lo = (k // 2) @ strides
    hi = ((k + 1) // 2) @ strides
    return lo, hi


def prolong(coarse_fn, fine_mesh: SimplicialMesh):
    """Nodal interpolation of a coarse P1 function on the refined mesh."""
    from .fem import P1Function

    lo, hi = prolongation_pairs(coarse_fn.mesh, fine_mesh)
    vals = 0.5 * (coarse_fn.values[lo] + coarse_fn.values[hi])
    return P1Function(fine_mesh, vals)


def write_mesh_text(mesh: SimplicialMesh, path) -> None:
    """Vertex table ``index x y [z]`` then simplex table ``index v0 v1 ...``."""
    with open(path, "w") as fh:
        fh.write(f"# vertices {mesh.n_vertices} dim {mesh.dim}\n")
        for i, v in enumerate(mesh.vertices):
            fh.write(f"{i} " + " ".join(f"{c:.17g}" for c in v) + "\n")
        fh.write(f"# simplices {mesh.n_simplices}\n")
        for i, s in enumerate(mesh.simplices):
            fh.write(f"{i} " + " ".join(str(int(c)) for c in s) + "\n")


def write_vtk(mesh: SimplicialMesh, path, point_data: dict | None = None) -> None:
    """Legacy ASCII unstructured-grid file, optionally with vertex fields."""
    cell_type = 5 if mesh.dim == 2 else 10
    pts = mesh.vertices if mesh.dim == 3 else np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    k = mesh.dim + 1
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nkoshelev mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
        fh.write(f"CELLS {mesh.n_simplices} {mesh.n_simplices * (k + 1)}\n")
        np.savetxt(fh, np.column_stack([np.full(mesh.n_simplices, k), mesh.simplices]), fmt="%d")
        fh.write(f"CELL_TYPES {mesh.n_simplices}\n")
        np.savetxt(fh, np.full(mesh.n_simplices, cell_type), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, arr in point_data.items():
                arr = np.asarray(arr, dtype=float).reshape(mesh.n_vertices, -1)
                if arr.shape[1] == 1:
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    np.savetxt(fh, arr, fmt="%.17g")
                else:
                    vec = np.zeros((mesh.n_vertices, 3))
                    vec[:, : min(3, arr.shape[1])] = arr[:, :3]
                    fh.write(f"VECTORS {name} double\n")
                    np.savetxt(fh, vec, fmt="%.17g")
