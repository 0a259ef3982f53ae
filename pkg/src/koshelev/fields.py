"""Structure fields ``a(x, z)`` with their z-Jacobians and p-growth metadata.

Evaluation is batched: ``x`` has shape ``(..., n)`` and ``z`` shape
``(..., N, n)``; ``field(x, z)`` returns ``(..., N, n)`` and
``field.jacobian(x, z)`` returns ``(..., N*n, N*n)`` acting on the row-major
flattening of ``z``.  Matrix-valued fields act on the component index:
``(A z)[alpha, i] = sum_beta A[alpha, beta] z[beta, i]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .tensor import frob2, is_symmetric, kron_component, operator_norm, sym_part

# gradients smaller than this are nudged before Jacobian evaluation when the
# Jacobian is singular at z = 0 (p != 2, mu = 0)
ZERO_GRADIENT_NUDGE = 1e-14


@dataclass(frozen=True)
class FieldMeta:
    p: float
    mu: float
    lam: float
    Lam: float
    growth_c: float
    symmetric_jacobian: bool
    linear: bool
    x_dependent: bool = False
    elliptic: bool = True  # symmetric part of the Jacobian satisfies the lower bound
    certified: bool = True  # lam/Lam derived analytically, not sampled
    name: str = ""
    params: dict = field(default_factory=dict, compare=False)

    @property
    def singular_at_zero(self) -> bool:
        return self.mu == 0.0 and self.p != 2.0


class StructureField:
    """A map ``(x, z) -> a(x, z)`` together with ``d_z a`` and metadata."""

    def __init__(
        self,
        evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray],
        jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray],
        meta: FieldMeta,
        components: int | None = None,
    ):
        self._evaluate = evaluate
        self._jacobian = jacobian
        self.meta = meta
        self.components = components

    def __call__(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        self._check_shape(z)
        return self._evaluate(x, z)

    def jacobian(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        self._check_shape(z)
        if self.meta.singular_at_zero:
            z = nudge_zero_gradients(z)
        return self._jacobian(x, z)

    def _check_shape(self, z):
        if self.components is not None and z.shape[-2] != self.components:
            raise ValueError(f"field {self.meta.name!r} expects N={self.components}, got z of shape {z.shape}")

    def __repr__(self):
        return f"StructureField({self.meta.name}, p={self.meta.p}, mu={self.meta.mu})"


def nudge_zero_gradients(z: np.ndarray) -> np.ndarray:
    small = frob2(z) < ZERO_GRADIENT_NUDGE**2
    if not np.any(small):
        return z
    z = z.copy()
    z[small, 0, 0] += ZERO_GRADIENT_NUDGE
    return z


def _flat(z):
    return z.reshape(*z.shape[:-2], -1)


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


def _eye_batch(shape, m):
    return np.broadcast_to(np.eye(m), (*shape, m, m))


# --------------------------------------------------------------------------
# built-in fields


def linear_field(A) -> StructureField:
    """``z -> A z`` with ``A`` (N x N) acting on the component index.

    ``A`` need not be symmetric.  Its eigenvalues must have positive real
    part; when the symmetric part is indefinite the field is flagged
    non-elliptic instead of being rejected, since the experiment matrices
    are of that kind.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    ev = np.linalg.eigvals(A)
    if np.any(ev.real <= 0):
        raise ValueError("A has an eigenvalue with nonpositive real part")
    w = np.linalg.eigvalsh(sym_part(A))
    lam, Lam = float(w[0]), float(w[-1])
    N = A.shape[0]

    def evaluate(x, z):
        return np.einsum("ab,...bi->...ai", A, z)

    def jacobian(x, z):
        n = z.shape[-1]
        return np.broadcast_to(kron_component(A, n), (*z.shape[:-2], N * n, N * n)).copy()

    meta = FieldMeta(
        p=2.0, mu=0.0, lam=lam, Lam=Lam, growth_c=max(operator_norm(A), 1e-300),
        symmetric_jacobian=is_symmetric(A), linear=True, elliptic=lam > 0,
        name="linear", params={"matrix": A.copy()},
    )
    return StructureField(evaluate, jacobian, meta, components=N)


def identity_field(scale: float = 1.0) -> StructureField:
    """``z -> scale * z`` for any number of components."""
    if scale <= 0:
        raise ValueError("scale must be positive")

    def evaluate(x, z):
        return scale * z

    def jacobian(x, z):
        m = z.shape[-2] * z.shape[-1]
        return scale * _eye_batch(z.shape[:-2], m).copy()

    meta = FieldMeta(
        p=2.0, mu=0.0, lam=scale, Lam=scale, growth_c=scale, symmetric_jacobian=True,
        linear=True, name="identity", params={"scale": scale},
    )
    return StructureField(evaluate, jacobian, meta)


def p_laplace_field(p: float, mu: float = 0.0) -> StructureField:
    """``z -> (mu^2 + |z|^2)^((p-2)/2) z``."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    q = (p - 2.0) / 2.0

    def evaluate(x, z):
        s = mu * mu + frob2(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(s > 0, np.power(np.where(s > 0, s, 1.0), q), 0.0)
        if q == 0:
            w = np.ones_like(s)
        return w[..., None, None] * z

    def jacobian(x, z):
        s = mu * mu + frob2(z)
        zf = _flat(z)
        m = zf.shape[-1]
        w0 = np.power(s, q)
        w1 = (p - 2.0) * np.power(s, q - 1.0)
        return w0[..., None, None] * _eye_batch(s.shape, m) + w1[..., None, None] * _outer(zf, zf)

    if p >= 2:
        growth = 2.0 ** ((p - 1.0) / 2.0) * max(1.0, mu ** (p - 1.0))
    else:
        growth = 1.0
    meta = FieldMeta(
        p=float(p), mu=float(mu), lam=min(1.0, p - 1.0), Lam=max(1.0, p - 1.0),
        growth_c=growth, symmetric_jacobian=True, linear=(p == 2.0),
        name="p_laplace", params={"p": p, "mu": mu},
    )
    return StructureField(evaluate, jacobian, meta)


def weighted_p_laplace_field(Bx: Callable, p: float, lam_B: float, Lam_B: float) -> StructureField:
    """``z -> (B(x) z . z)^((p-2)/2) B(x) z`` for symmetric ``B(x)`` with
    ``lam_B |xi|^2 <= B(x) xi . xi <= Lam_B |xi|^2``.

    ``Bx`` maps points ``(..., n)`` to matrices ``(..., N*n, N*n)``.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    if not 0 < lam_B <= Lam_B:
        raise ValueError("need 0 < lam_B <= Lam_B")
    q = (p - 2.0) / 2.0

    def _B(x, z):
        B = np.asarray(Bx(x), dtype=float)
        m = z.shape[-2] * z.shape[-1]
        if B.shape[-2:] != (m, m):
            raise ValueError(f"B(x) has shape {B.shape[-2:]}, expected {(m, m)}")
        if not is_symmetric(B):
            raise ValueError("B(x) is not symmetric")
        w = np.linalg.eigvalsh(sym_part(B))
        if np.any(w[..., 0] <= 0):
            raise ValueError("B(x) is not positive definite at a queried point")
        return np.broadcast_to(B, (*z.shape[:-2], m, m))

    def evaluate(x, z):
        B = _B(x, z)
        zf = _flat(z)
        Bz = np.einsum("...ij,...j->...i", B, zf)
        s = np.sum(Bz * zf, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(s > 0, np.power(np.where(s > 0, s, 1.0), q), 0.0)
        if q == 0:
            w = np.ones_like(s)
        return (w[..., None] * Bz).reshape(z.shape)

    def jacobian(x, z):
        B = _B(x, z)
        zf = _flat(z)
        Bz = np.einsum("...ij,...j->...i", B, zf)
        s = np.sum(Bz * zf, axis=-1)
        w0 = np.power(s, q)
        w1 = (p - 2.0) * np.power(s, q - 1.0)
        return w0[..., None, None] * B + w1[..., None, None] * _outer(Bz, Bz)

    if p >= 2:
        lam, Lam = lam_B ** (p / 2.0), (p - 1.0) * Lam_B ** (p / 2.0)
        growth = Lam_B ** (p / 2.0)
    else:
        lam, Lam = (p - 1.0) * lam_B * Lam_B**q, Lam_B * lam_B**q
        growth = lam_B**q * Lam_B
    meta = FieldMeta(
        p=float(p), mu=0.0, lam=lam, Lam=Lam, growth_c=growth, symmetric_jacobian=True,
        linear=(p == 2.0), x_dependent=True, name="weighted_p_laplace",
        params={"p": p, "lam_B": lam_B, "Lam_B": Lam_B},
    )
    return StructureField(evaluate, jacobian, meta)


def _quartic_bounds(A: np.ndarray) -> tuple[float, float]:
    # J xi.xi = (1+t^2) A+ xi.xi + 4 t (Az.xi)(z.xi) with t = |z|^2; the
    # rank-one part lies in [2t(Az.z - |Az||z|), 2t(Az.z + |Az||z|)]
    # relative to |xi|^2, then divide by the mu = 1 weight (1 + t)^2.
    w = np.linalg.eigvalsh(sym_part(A))
    lam_s, Lam_s = float(w[0]), float(w[-1])
    nrm = operator_norm(A)
    t = np.concatenate([np.linspace(0.0, 10.0, 20001), np.geomspace(10.0, 1e8, 2001)])
    lo = ((1 + t * t) * lam_s + 2 * t * t * (lam_s - nrm)) / (1 + t) ** 2
    hi = ((1 + t * t) * Lam_s + 2 * t * t * (Lam_s + nrm)) / (1 + t) ** 2
    lo_inf = 3 * lam_s - 2 * nrm
    hi_inf = 3 * Lam_s + 2 * nrm
    return float(min(lo.min(), lo_inf)), float(max(hi.max(), hi_inf))


def quartic_field(A=None) -> StructureField:
    """``z -> (1 + |z|^4) A z``; ``A=None`` is the identity for any N.

    Growth is recorded as p = 6 with mu = 1.
    """
    if A is None:
        Amat = None
        lam, Lam, nrm, sym = 0.5, 5.0, 1.0, True
        N = None
    else:
        Amat = np.atleast_2d(np.asarray(A, dtype=float))
        ev = np.linalg.eigvals(Amat)
        if np.any(ev.real <= 0):
            raise ValueError("A has an eigenvalue with nonpositive real part")
        if np.allclose(Amat, np.eye(len(Amat))):
            lam, Lam = 0.5, 5.0
        else:
            lam, Lam = _quartic_bounds(Amat)
        nrm = operator_norm(Amat)
        sym = is_symmetric(Amat)
        N = Amat.shape[0]

    def apply_A(z):
        return z if Amat is None else np.einsum("ab,...bi->...ai", Amat, z)

    def evaluate(x, z):
        t = frob2(z)
        return (1.0 + t * t)[..., None, None] * apply_A(z)

    def jacobian(x, z):
        t = frob2(z)
        n = z.shape[-1]
        m = z.shape[-2] * n
        K = np.eye(m) if Amat is None else kron_component(Amat, n)
        lin = (1.0 + t * t)[..., None, None] * K
        return lin + 4.0 * t[..., None, None] * _outer(_flat(apply_A(z)), _flat(z))

    meta = FieldMeta(
        p=6.0, mu=1.0, lam=lam, Lam=Lam, growth_c=2.0 * nrm, symmetric_jacobian=sym,
        linear=False, elliptic=lam > 0, name="quartic",
        params={} if Amat is None else {"matrix": Amat.copy()},
    )
    return StructureField(evaluate, jacobian, meta, components=N)


def scaled_field(base: StructureField, weight: Callable, wmin: float, wmax: float) -> StructureField:
    """``(x, z) -> w(x) base(x, z)`` with ``0 < wmin <= w <= wmax``.

    ``weight`` maps points ``(..., n)`` to scalars ``(...)``.
    """
    if not 0 < wmin <= wmax:
        raise ValueError("need 0 < wmin <= wmax")

    def evaluate(x, z):
        return np.asarray(weight(x))[..., None, None] * base(x, z)

    def jacobian(x, z):
        return np.asarray(weight(x))[..., None, None] * base.jacobian(x, z)

    m = base.meta
    meta = replace(
        m, lam=wmin * m.lam, Lam=wmax * m.Lam, growth_c=wmax * m.growth_c, x_dependent=True,
        name=f"scaled({m.name})", params={"base": base, "wmin": wmin, "wmax": wmax},
    )
    return StructureField(evaluate, jacobian, meta, components=base.components)


def perturbed_field(base: StructureField, other: StructureField, eps: float) -> StructureField:
    """``a = base + eps * other`` for two fields with the same ``p`` and ``mu``.

    The growth bounds combine exactly, so ``eps`` can be swept to study
    admissibility of ``(a, base)`` pairs.
    """
    b, c = base.meta, other.meta
    if b.p != c.p or b.mu != c.mu:
        raise ValueError("perturbed_field needs fields with equal p and mu")

    def evaluate(x, z):
        return base(x, z) + eps * other(x, z)

    def jacobian(x, z):
        return base.jacobian(x, z) + eps * other.jacobian(x, z)

    lo = b.lam + (eps * c.lam if eps >= 0 else eps * c.Lam)
    hi = b.Lam + (eps * c.Lam if eps >= 0 else eps * c.lam)
    meta = FieldMeta(
        p=b.p, mu=b.mu, lam=lo, Lam=hi, growth_c=b.growth_c + abs(eps) * c.growth_c,
        symmetric_jacobian=b.symmetric_jacobian and c.symmetric_jacobian,
        linear=b.linear and c.linear, x_dependent=b.x_dependent or c.x_dependent,
        elliptic=lo > 0, certified=b.certified and c.certified,
        name=f"perturbed({b.name},{c.name})", params={"base": base, "other": other, "eps": eps},
    )
    return StructureField(evaluate, jacobian, meta, components=base.components or other.components)


# --------------------------------------------------------------------------
# sampling and audit


@dataclass
class SampleSpec:
    """Where to probe a field: x uniform in the unit cube, z with log-uniform
    magnitudes plus a band around the mu scale."""

    n_x: int = 16
    n_z: int = 64
    seed: int = 0
    dim: int = 3
    components: int = 3
    log10_range: tuple[float, float] = (-3.0, 3.0)

    def draw(self, mu: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        if self.n_x < 1 or self.n_z < 1:
            raise ValueError("empty sample set")
        rng = np.random.default_rng(self.seed)
        xs = rng.random((self.n_x, self.dim))
        dirs = rng.standard_normal((self.n_z, self.components, self.dim))
        dirs /= np.sqrt(frob2(dirs))[:, None, None]
        mags = 10.0 ** rng.uniform(*self.log10_range, self.n_z)
        if mu > 0:
            band = self.n_z // 4
            mags[:band] = mu * 10.0 ** rng.uniform(-1.0, 1.0, band)
        zs = dirs * mags[:, None, None]
        X = np.repeat(xs, self.n_z, axis=0)
        Z = np.tile(zs, (self.n_x, 1, 1))
        return X, Z


def _weight_pow(mu, z, p):
    return np.power(mu * mu + frob2(z), (p - 2.0) / 2.0)


def estimate_growth_bounds(f: StructureField, sampler: SampleSpec) -> tuple[float, float]:
    X, Z = sampler.draw(f.meta.mu)
    J = f.jacobian(X, Z)
    w = np.linalg.eigvalsh(sym_part(J))
    scale = _weight_pow(f.meta.mu, Z, f.meta.p)
    return float((w[:, 0] / scale).min()), float((w[:, -1] / scale).max())


@dataclass
class CheckReport:
    passed: bool
    samples: int
    worst_lower: float  # min of (smallest eigenvalue / weight) - lam, relative to lam
    worst_upper: float  # min of Lam - (largest eigenvalue / weight), relative to Lam
    worst_growth: float  # max of |a| / (c (1 + |z|^(p-1)))
    worst_fd: float  # max relative Jacobian vs finite-difference mismatch
    failures: list = field(default_factory=list)


def fd_jacobian(f: StructureField, x: np.ndarray, z: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Centered finite differences of ``f`` in ``z`` (batched)."""
    N, n = z.shape[-2:]
    m = N * n
    h = rel_step * np.maximum(1.0, np.sqrt(frob2(z)))
    J = np.empty((*z.shape[:-2], m, m))
    for k in range(m):
        dz = np.zeros_like(z)
        dz.reshape(*z.shape[:-2], m)[..., k] = h
        fp = f(x, z + dz)
        fm = f(x, z - dz)
        J[..., :, k] = _flat(fp - fm) / (2.0 * h[..., None])
    return J


def field_check(f: StructureField, sampler: SampleSpec | None = None, tol: float = 1e-9, fd_tol: float = 1e-5) -> CheckReport:
    """Audit growth, ellipticity and Jacobian consistency on samples."""
    sampler = sampler or SampleSpec(components=f.components or 3)
    if f.components is not None and sampler.components != f.components:
        sampler = replace(sampler, components=f.components)
    m = f.meta
    X, Z = sampler.draw(m.mu)
    if m.singular_at_zero:
        Z = Z[np.sqrt(frob2(Z)) > 1e-8]
        X = X[: len(Z)]
    J = f.jacobian(X, Z)
    w = np.linalg.eigvalsh(sym_part(J))
    scale = _weight_pow(m.mu, Z, m.p)
    lo = w[:, 0] / scale
    hi = w[:, -1] / scale
    lower_gap = (lo - m.lam) / max(abs(m.lam), 1e-300)
    upper_gap = (m.Lam - hi) / max(abs(m.Lam), 1e-300)
    nz = np.sqrt(frob2(Z))
    growth = np.sqrt(frob2(f(X, Z))) / (m.growth_c * (1.0 + nz ** (m.p - 1.0)))
    Jfd = fd_jacobian(f, X, Z)
    fd = np.sqrt(np.sum((J - Jfd) ** 2, axis=(-2, -1))) / np.maximum(np.sqrt(np.sum(J * J, axis=(-2, -1))), 1e-300)

    failures = []
    for name, bad in (
        ("lower ellipticity", lower_gap < -tol),
        ("upper ellipticity", upper_gap < -tol),
        ("growth", growth > 1.0 + tol),
        ("jacobian mismatch", fd > fd_tol),
    ):
        idx = np.flatnonzero(bad)
        if idx.size:
            k = int(idx[0])
            failures.append({"check": name, "count": int(idx.size), "x": X[k].tolist(), "z": Z[k].tolist()})
    return CheckReport(
        passed=not failures,
        samples=len(Z),
        worst_lower=float(lower_gap.min()),
        worst_upper=float(upper_gap.min()),
        worst_growth=float(growth.max()),
        worst_fd=float(fd.max()),
        failures=failures,
    )
