"""Spectral constants of a field pair: K_{a,b}, relaxation parameters and rates."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import SampleSpec, StructureField
from .tensor import NotPositiveDefiniteError, is_symmetric, skew_part, sym_part

GOLDEN_HI = (3.0 + math.sqrt(5.0)) / 2.0
GOLDEN_LO = (3.0 - math.sqrt(5.0)) / 2.0


def gamma_star_symmetric(lam: float, Lam: float) -> tuple[float, float]:
    """Optimal relaxation ``2/(Lam+lam)`` and contraction ``(Lam-lam)/(Lam+lam)``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if Lam < lam:
        raise ValueError("need Lambda >= lambda")
    return 2.0 / (Lam + lam), (Lam - lam) / (Lam + lam)


def kgamma_from_bounds(lam: float, Lam: float, sigma: float) -> tuple[float, float]:
    """Two-case ``(K_gamma, gamma)`` from bounds on the symmetric part and on ``sigma``."""
    if not lam > 0:
        raise NotPositiveDefiniteError(f"symmetric part is not positive definite (lambda = {lam:.6g})")
    sigma = max(sigma, 0.0)
    if sigma >= lam * (Lam - lam) / 2.0:
        k2 = sigma / (sigma + lam * lam)
        gamma = lam / (sigma + lam * lam)
    else:
        k2 = ((Lam - lam) ** 2 + 4.0 * sigma) / (Lam + lam) ** 2
        gamma = 2.0 / (Lam + lam)
    return math.sqrt(k2), gamma


def kgamma_sigma(A: np.ndarray) -> float:
    """Largest eigenvalue of ``A+ A- - A- A+ - (A-)^2`` (symmetric by construction)."""
    Ap, Am = sym_part(A), skew_part(A)
    C = Ap @ Am - Am @ Ap - Am @ Am
    return float(np.linalg.eigvalsh(sym_part(C))[-1])


def koshelev_kgamma(A) -> tuple[float, float, float]:
    """``(K_gamma, gamma, sigma)`` with ``||I - gamma A|| <= K_gamma``.

    ``A`` may be nonsymmetric; its symmetric part must be positive definite.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    w = np.linalg.eigvalsh(sym_part(A))
    sigma = kgamma_sigma(A)
    K, gamma = kgamma_from_bounds(float(w[0]), float(w[-1]), sigma)
    return K, gamma, sigma


def contraction_rate(p: float, lam_b: float, Lam_b: float, K: float) -> tuple[float, bool]:
    """Linear rate ``R`` of the outer iteration and whether ``R < 1``."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    if not 0 < lam_b <= Lam_b:
        raise ValueError("need 0 < lambda_b <= Lambda_b")
    if K < 0:
        raise ValueError("K must be nonnegative")
    disp = Lam_b / lam_b
    if p >= 2:
        base = disp * K * GOLDEN_HI ** ((p - 2.0) / (2.0 * p)) * 6.0 ** (p - 2.0) * (p - 1.0)
        R = base ** (1.0 / (p - 1.0))
    else:
        base = disp * K * GOLDEN_LO ** ((p - 2.0) / 4.0) * 2.0 ** (2.0 - p) / (p - 1.0)
        R = base ** (2.0 / p)
    return float(R), bool(R < 1.0)


@dataclass
class ConstantsReport:
    lambda_ab: float
    Lambda_ab: float
    K_ab: float
    gamma_star: float
    sigma: float
    K_gamma: float
    rate_R: float
    admissible: bool
    p: float
    lambda_b: float
    Lambda_b: float
    symmetric: bool = True
    certified: bool = False
    samples: int = 0
    notes: list = field(default_factory=list)

    @property
    def K(self) -> float:
        """Contraction constant used for the rate (K_ab or K_gamma)."""
        return self.K_ab if self.symmetric else self.K_gamma

    def as_row(self) -> dict:
        row = asdict(self)
        row["notes"] = "; ".join(self.notes)
        return row


def _analytic_ratio(a: StructureField, b: StructureField):
    """Exact matrix ``B^{-1}A`` (or its spectral bounds) for recognised pairs, else None."""
    if a is b:
        return ("bounds", 1.0, 1.0)
    pa = a.meta.params
    if "wmin" in pa and pa.get("base") is b:
        return ("bounds", pa["wmin"], pa["wmax"])
    if "eps" in pa and pa.get("base") is b and pa.get("other") is b:
        s = 1.0 + pa["eps"]
        return ("bounds", s, s)
    if a.meta.linear and b.meta.linear and not (a.meta.x_dependent or b.meta.x_dependent):
        N = a.components or b.components or 1
        x = np.zeros((1, 2))
        z = np.zeros((1, N, 2))
        A = a.jacobian(x, z)[0]
        B = b.jacobian(x, z)[0]
        return ("matrix", A, B)
    return None


def _pair_spectra(A: np.ndarray, B: np.ndarray):
    """Bounds of the symmetric part of ``L^-1 A L^-T`` (``B = L L^T``) and ``sigma``, batched."""
    B = sym_part(B)
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("reference Jacobian is not positive definite at a sample") from exc
    Li = np.linalg.inv(L)
    C = Li @ A @ np.swapaxes(Li, -1, -2)
    w = np.linalg.eigvalsh(sym_part(C))
    Cp, Cm = sym_part(C), skew_part(C)
    S = Cp @ Cm - Cm @ Cp - Cm @ Cm
    sig = np.linalg.eigvalsh(sym_part(S))[..., -1]
    return w[..., 0], w[..., -1], sig


def kab_for_fields(a: StructureField, b: StructureField, sampler: SampleSpec | None = None) -> ConstantsReport:
    """Constants for the pair ``(a, b)``.

    Recognised pairs (``a`` is ``b``, scaled or self-perturbed copies of
    ``b``, constant linear pairs) are computed exactly and marked
    certified; everything else is estimated on samples.
    """
    if not b.meta.symmetric_jacobian:
        raise NotPositiveDefiniteError("reference field must have a symmetric Jacobian")
    notes: list[str] = []
    if a.meta.p != b.meta.p:
        notes.append(f"growth exponents differ (a: p={a.meta.p:g}, b: p={b.meta.p:g})")
    symmetric = a.meta.symmetric_jacobian
    analytic = _analytic_ratio(a, b)
    samples = 0
    if analytic is not None and analytic[0] == "bounds":
        lam, Lam, sigma = float(analytic[1]), float(analytic[2]), 0.0
        symmetric = True
    elif analytic is not None:
        lo, hi, sg = _pair_spectra(analytic[1], analytic[2])
        lam, Lam, sigma = float(lo), float(hi), float(sg)
        symmetric = is_symmetric(analytic[1])
    else:
        sampler = sampler or SampleSpec(components=a.components or b.components or 3)
        X, Z = sampler.draw(b.meta.mu)
        if len(Z) == 0:
            raise ValueError("empty sample set")
        lo, hi, sg = _pair_spectra(a.jacobian(X, Z), b.jacobian(X, Z))
        lam, Lam, sigma = float(lo.min()), float(hi.max()), float(sg.max())
        samples = len(Z)
        notes.append(f"sampled bounds over {samples} points, observed range [{lam:.6g}, {Lam:.6g}]")
    certified = analytic is not None and b.meta.certified

    if lam > 0:
        K_ab = (Lam - lam) / (Lam + lam)
        gamma_star = 2.0 / (Lam + lam)
    else:
        K_ab, gamma_star = math.nan, math.nan
        notes.append(f"symmetric part of B^-1 A is not positive definite (lambda_ab = {lam:.6g})")

    if symmetric:
        K_gamma, sigma = K_ab, 0.0
    elif lam > 0:
        K_gamma, gamma_star = kgamma_from_bounds(lam, Lam, sigma)
        notes.append("nonsymmetric pair: gamma and K from the skew-corrected two-case formula")
    else:
        K_gamma = math.nan

    K_use = K_ab if symmetric else K_gamma
    if math.isfinite(K_use):
        R, admissible = contraction_rate(b.meta.p, b.meta.lam, b.meta.Lam, K_use)
    else:
        R, admissible = math.inf, False
    return ConstantsReport(
        lambda_ab=lam, Lambda_ab=Lam, K_ab=K_ab, gamma_star=gamma_star, sigma=sigma, K_gamma=K_gamma,
        rate_R=R, admissible=admissible, p=b.meta.p, lambda_b=b.meta.lam, Lambda_b=b.meta.Lam,
        symmetric=symmetric, certified=certified, samples=samples, notes=notes,
    )
