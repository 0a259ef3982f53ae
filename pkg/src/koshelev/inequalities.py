"""Numeric checks of the p-growth inequalities the convergence theory rests on.

Everything here is an oracle: plain evaluation plus adaptive quadrature, with
no shared code path with the solver.  The sweep functions draw reproducible
random samples and count violations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .parallel import ordered_map
from .tensor import frob2, inner

GOLDEN_LO = (3.0 - math.sqrt(5.0)) / 2.0
GOLDEN_HI = (3.0 + math.sqrt(5.0)) / 2.0


class QuadratureError(RuntimeError):
    pass


def _log_cosh(u):
    u = abs(u)
    return u + math.log1p(math.exp(-2.0 * u)) - math.log(2.0)


def line_integral(mu: float, gamma: float, xi, eta, tol: float = 1e-11) -> float:
    """``int_0^1 (mu^2 + |t xi + (1-t) eta|^2)^gamma dt``.

    For ``gamma < 0`` the integrand may be nearly singular where the segment
    passes the origin.  Writing it as ``qa^gamma ((t - t0)^2 + delta^2)^gamma``
    and substituting ``t - t0 = delta sinh(u)`` leaves the smooth integrand
    ``cosh(u)^(2 gamma + 1)``.
    """
    if gamma <= -0.5:
        raise ValueError("gamma must exceed -1/2")
    xi = np.asarray(xi, dtype=float).ravel()
    eta = np.asarray(eta, dtype=float).ravel()
    d = xi - eta
    qa = float(d @ d)
    if gamma == 0:
        return 1.0
    if qa == 0.0:
        qc = float(eta @ eta) + mu * mu
        if qc == 0.0:
            if gamma < 0:
                raise ValueError("integrand undefined: mu = 0 and xi = eta = 0")
            return 0.0
        return qc**gamma
    t0 = -float(d @ eta) / qa
    perp = eta + t0 * d
    floor = mu * mu + float(perp @ perp)

    if gamma > 0:
        def f(t):
            r = eta + t * d
            return (mu * mu + float(r @ r)) ** gamma

        points = [t0] if 0.0 < t0 < 1.0 else None
        val, err = integrate.quad(f, 0.0, 1.0, epsabs=tol, epsrel=tol, points=points, limit=200)
    else:
        k = 2.0 * gamma + 1.0
        sa, sb = -t0, 1.0 - t0
        if floor == 0.0:
            # integrand qa^gamma |s|^(2 gamma) on [sa, sb]
            def prim(x):
                return math.copysign(abs(x) ** k / k, x)

            return qa**gamma * (prim(sb) - prim(sa))
        delta = math.sqrt(floor / qa)
        ua, ub = math.asinh(sa / delta), math.asinh(sb / delta)

        def g(u):
            return math.exp(k * _log_cosh(u))

        points = [0.0] if ua < 0.0 < ub else None
        val, err = integrate.quad(g, ua, ub, epsabs=0.0, epsrel=tol, points=points, limit=200)
        scale = qa**gamma * delta**k
        val, err = scale * val, scale * err
    if not np.isfinite(val) or err > 1e3 * tol * max(1.0, abs(val)):
        raise QuadratureError(f"quadrature did not reach tolerance (err={err:.3e})")
    return float(val)


@dataclass
class BoundsReport:
    lower_ok: bool
    upper_ok: bool
    integral: float
    lower: float
    upper: float
    slack: tuple[float, float]  # relative (integral - lower, upper - integral)


def vfunc_constants(gamma: float) -> tuple[float, float]:
    if gamma >= 0:
        return 1.0 / (6.0**gamma * (2.0 * gamma + 1.0)), 2.0**gamma
    return 2.0**gamma, 1.0 / (4.0**gamma * (gamma + 1.0))


def check_vfunc_equiv(mu, gamma, xi, eta, slack_tol: float = 1e-10) -> BoundsReport:
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    base = (mu * mu + float(np.sum(eta * eta)) + float(np.sum((eta - xi) ** 2))) ** gamma
    c_lo, c_hi = vfunc_constants(gamma)
    val = line_integral(mu, gamma, xi, eta)
    lo, hi = c_lo * base, c_hi * base
    scale = max(abs(val), 1e-300)
    s_lo = (val - lo) / scale
    s_hi = (hi - val) / scale
    return BoundsReport(s_lo >= -slack_tol, s_hi >= -slack_tol, val, lo, hi, (s_lo, s_hi))


def young_constant(p: float, eps: float) -> float:
    if p < 1:
        raise ValueError("p must be at least 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    # 0**0 is 1 in Python, the continuous limit at p = 1
    return max(1.0 / (4.0 * eps), (p - 1.0) ** (p - 1.0) / (p**p * eps ** (p - 1.0)))


def _weight(s: np.ndarray, expo: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, np.power(np.where(s > 0, s, 1.0), expo), 0.0)


def _young_sides(x, y, mu, p, eps):
    # |V_mu(v)|^2 = (mu^2 + |v|^2)^((p-2)/2) |v|^2, valid down to p = 1
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sx = mu * mu + frob2(x)
    sy = mu * mu + frob2(y)
    wx = _weight(sx, (p - 2.0) / 2.0)
    lhs = wx * inner(x, y)
    rhs = eps * wx * frob2(x) + young_constant(p, eps) * _weight(sy, (p - 2.0) / 2.0) * frob2(y)
    return lhs, rhs


def check_v_young(x, y, mu, p, eps, slack_tol: float = 1e-12) -> bool:
    lhs, rhs = _young_sides(x, y, mu, p, eps)
    return bool(lhs <= rhs + slack_tol * max(1.0, abs(float(rhs))))


def check_triangle_estimate(a, b, slack_tol: float = 1e-12) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = float(np.sum(a * a) + np.sum(b * b))
    mid = float(np.sum(a * a) + np.sum((a - b) ** 2))
    tol = slack_tol * max(1.0, s)
    return GOLDEN_LO * s <= mid + tol and mid <= GOLDEN_HI * s + tol


def triangle_ratio(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float((np.sum(a * a) + np.sum((a - b) ** 2)) / (np.sum(a * a) + np.sum(b * b)))


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    name: str
    samples: int
    violations: int
    worst_slack: float
    worst_case: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and all(self.extra.get("ok", [True]))


def _vfunc_task(args):
    mu, gamma, xi, eta, slack, c_hi = args
    rep = check_vfunc_equiv(mu, gamma, xi, eta, slack)
    if c_hi is not None:
        base = rep.upper / vfunc_constants(gamma)[1]
        hi = c_hi(gamma) * base
        s_hi = (hi - rep.integral) / max(abs(rep.integral), 1e-300)
        rep = BoundsReport(rep.lower_ok, s_hi >= -slack, rep.integral, rep.lower, hi, (rep.slack[0], s_hi))
    return rep


def corrected_upper_constant(gamma: float) -> float:
    """``2^(-3 gamma) / (2 gamma + 1)``: the mu = 0, through-origin worst case
    for ``gamma in (-1/2, 0]``, which the stated constant undershoots."""
    return 2.0 ** (-3.0 * gamma) / (2.0 * gamma + 1.0)


def _vfunc_samples(regime, samples, seed, shape, stress):
    rng = np.random.default_rng(seed)
    lo, hi = (0.0, 5.0) if regime == "positive" else (-0.49, 0.0)
    mus = rng.uniform(0.0, 10.0, samples)
    gammas = rng.uniform(lo, hi, samples)
    xis = rng.uniform(-10, 10, (samples, *shape))
    etas = rng.uniform(-10, 10, (samples, *shape))
    if stress:
        # mu = 0 and segments through the origin, the extremal configurations
        mus[rng.random(samples) < 0.5] = 0.0
        through = rng.random(samples) < 0.5
        etas[through] = -rng.uniform(0.05, 20.0, (int(through.sum()), 1, 1)) * xis[through]
    return mus, gammas, xis, etas


def sweep_vfunc(
    regime: str,
    samples: int,
    seed: int,
    shape=(3, 3),
    slack: float = 1e-10,
    stress: bool = False,
    upper_constant=None,
) -> SweepResult:
    """Sweep the two-sided line-integral bounds.

    ``regime`` is ``"positive"`` (gamma in [0, 5]) or ``"negative"``
    (gamma in (-0.49, 0]).  Plain draws take mu in [0, 10] and entries in
    [-10, 10]; ``stress`` pins half the draws to mu = 0 and half to
    segments through the origin.  ``upper_constant`` replaces the upper
    constant (a callable of gamma).
    """
    mus, gammas, xis, etas = _vfunc_samples(regime, samples, seed, shape, stress)
    tasks = [(mus[k], gammas[k], xis[k], etas[k], slack, upper_constant) for k in range(samples)]
    reports = ordered_map(_vfunc_task, tasks, chunksize=256)
    lower_viol = sum(not r.lower_ok for r in reports)
    upper_viol = sum(not r.upper_ok for r in reports)
    worst_lo = min(r.slack[0] for r in reports)
    worst_hi = min(r.slack[1] for r in reports)
    k = int(np.argmin([min(r.slack) for r in reports]))
    worst_case = {
        "mu": float(mus[k]),
        "gamma": float(gammas[k]),
        "xi": xis[k].tolist(),
        "eta": etas[k].tolist(),
        "integral": reports[k].integral,
        "lower": reports[k].lower,
        "upper": reports[k].upper,
    }
    name = f"vfunc_equiv[{regime}{',stress' if stress else ''}{',corrected' if upper_constant else ''}]"
    return SweepResult(
        name,
        samples,
        lower_viol + upper_viol,
        float(min(worst_lo, worst_hi)),
        worst_case,
        {"lower_violations": lower_viol, "upper_violations": upper_viol,
         "worst_lower_slack": float(worst_lo), "worst_upper_slack": float(worst_hi)},
    )


def sweep_young(samples: int, seed: int, shape=(3, 3), slack: float = 1e-10) -> SweepResult:
    rng = np.random.default_rng(seed)
    mus = rng.uniform(0.0, 10.0, samples)
    mus[rng.random(samples) < 0.25] = 0.0
    ps = rng.uniform(1.0, 6.0, samples)
    ps[rng.random(samples) < 0.05] = 1.0
    epss = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), samples))
    mags = np.exp(rng.uniform(np.log(1e-3), np.log(1e2), (samples, 2)))
    x = rng.standard_normal((samples, *shape))
    y = rng.standard_normal((samples, *shape))
    x *= (mags[:, 0] / np.sqrt(frob2(x)))[:, None, None]
    y *= (mags[:, 1] / np.sqrt(frob2(y)))[:, None, None]
    violations = 0
    worst = math.inf
    worst_case = {}
    for k in range(samples):
        lhs, rhs = _young_sides(x[k], y[k], mus[k], ps[k], epss[k])
        lhs, rhs = float(lhs), float(rhs)
        s = (rhs - lhs) / max(abs(rhs), 1e-300)
        if lhs > rhs + slack * max(1.0, abs(rhs)):
            violations += 1
        if s < worst:
            worst = s
            worst_case = {"mu": float(mus[k]), "p": float(ps[k]), "eps": float(epss[k]), "index": k}
    return SweepResult("v_young", samples, violations, float(worst), worst_case)


def triangle_ratio_extremes(seed: int, starts: int = 8, dim: int = 4) -> tuple[float, float]:
    """Inf and sup of the triangle-estimate ratio by local optimisation."""
    rng = np.random.default_rng(seed)

    def ratio(v, sign):
        return sign * triangle_ratio(v[:dim], v[dim:])

    lo, hi = math.inf, -math.inf
    for _ in range(starts):
        v0 = rng.standard_normal(2 * dim)
        r_lo = optimize.minimize(ratio, v0, args=(1.0,), method="BFGS", options={"gtol": 1e-12})
        r_hi = optimize.minimize(ratio, v0, args=(-1.0,), method="BFGS", options={"gtol": 1e-12})
        lo = min(lo, r_lo.fun)
        hi = max(hi, -r_hi.fun)
    return float(lo), float(hi)


def sweep_triangle(samples: int, seed: int, shape=(3, 3), slack: float = 1e-10) -> SweepResult:
    rng = np.random.default_rng(seed)
    a = rng.uniform(-10, 10, (samples, *shape))
    b = rng.uniform(-10, 10, (samples, *shape))
    a[rng.random(samples) < 0.05] = 0.0
    s = frob2(a) + frob2(b)
    mid = frob2(a) + frob2(a - b)
    lo_slack = (mid - GOLDEN_LO * s) / np.maximum(s, 1e-300)
    hi_slack = (GOLDEN_HI * s - mid) / np.maximum(s, 1e-300)
    worst_each = np.minimum(lo_slack, hi_slack)
    violations = int(np.sum(worst_each < -slack))
    k = int(np.argmin(worst_each))
    inf_r, sup_r = triangle_ratio_extremes(seed)
    sharp_ok = abs(inf_r - GOLDEN_LO) <= 1e-3 and abs(sup_r - GOLDEN_HI) <= 1e-3
    return SweepResult(
        "triangle_estimate",
        samples,
        violations,
        float(worst_each[k]),
        {"index": k},
        {"inf_ratio": inf_r, "sup_ratio": sup_r, "ok": [sharp_ok]},
    )


def verify_all(samples: int = 10_000, seed: int = 0, stress: bool = True) -> list[SweepResult]:
    """All lemma sweeps; plain draws first, then the stress draws."""
    results = [
        sweep_vfunc("positive", samples, seed),
        sweep_vfunc("negative", samples, seed + 1),
        sweep_young(samples, seed + 2),
        sweep_triangle(samples, seed + 3),
    ]
    if stress:
        results += [
            sweep_vfunc("positive", samples, seed + 4, stress=True),
            sweep_vfunc("negative", samples, seed + 5, stress=True),
            sweep_vfunc("negative", samples, seed + 5, stress=True, upper_constant=corrected_upper_constant),
        ]
    return results
