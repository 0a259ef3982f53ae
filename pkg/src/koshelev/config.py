"""Flat ``key = value`` configuration files.

Lines are ``key = value``; ``#`` starts a comment.  Recognised keys::

    mesh.dim = 3                 mesh.level = 2            components = 3
    field.a.kind = linear        field.a.matrix = 1,1,2,0,2,3,0,0,1
    field.b.kind = identity      field.b.scale = 1
    field.X.kind = p_laplace     field.X.p = 3             field.X.mu = 0
    field.X.kind = quartic       field.X.matrix = ...      (optional, default identity)
    field.X.kind = weighted_p_laplace   field.X.p = 3      field.X.amp = 0.5
    field.a.kind = scaled_b      field.a.amp = 0.02        (a = (1 + amp sin^2(pi x)) b)
    rhs.flux = zero | linear_experiment | smooth | constant:<N*dim values>
    rhs.source = zero | nonlinear_experiment | constant:<N values>
    reaction = none | power:4
    gamma = auto | 0.6667        p = 2
    stop.tol = 1e-9              stop.max_iter = 1000
    solver.newton_tol = 1e-11    solver.linear_tol = 1e-12  solver.max_newton = 50
    diagnostics.lq = 2,4
    sample.seed = 0              sample.n_x = 16           sample.n_z = 64
    export.solution = solution.txt      export.trace = trace.csv
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem import PowerReaction
from .fields import (
    SampleSpec,
    StructureField,
    identity_field,
    linear_field,
    p_laplace_field,
    quartic_field,
    scaled_field,
    weighted_p_laplace_field,
)
from .solvers import StepConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


KNOWN_PREFIXES = ("mesh.", "field.a.", "field.b.", "rhs.", "stop.", "solver.", "diagnostics.", "sample.", "export.")
KNOWN_KEYS = {"components", "gamma", "p", "reaction"}


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key not in KNOWN_KEYS and not key.startswith(KNOWN_PREFIXES):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def get_float(cfg: dict, key: str, default=None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return float(default)
    try:
        v = float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from exc
    if not math.isfinite(v):
        raise ConfigError(f"{key}: value must be finite")
    return v


def get_int(cfg: dict, key: str, default=None) -> int:
    v = get_float(cfg, key, default)
    if v != int(v):
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}")
    return int(v)


def get_floats(cfg: dict, key: str, default: str = "") -> list[float]:
    raw = cfg.get(key, default).strip()
    if not raw:
        return []
    try:
        return [float(s) for s in raw.replace(";", ",").split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {raw!r}") from exc


def _matrix(cfg, key) -> np.ndarray:
    vals = get_floats(cfg, key)
    n = int(round(math.sqrt(len(vals))))
    if n == 0 or n * n != len(vals):
        raise ConfigError(f"{key}: need n*n row-major entries, got {len(vals)}")
    return np.array(vals).reshape(n, n)


def build_field(cfg: dict, which: str, base: StructureField | None = None) -> StructureField:
    """Field ``which`` (``a`` or ``b``) from ``field.<which>.*`` keys."""
    pre = f"field.{which}."
    kind = cfg.get(pre + "kind")
    if kind is None:
        raise ConfigError(f"missing required key {pre + 'kind'!r}")
    try:
        if kind == "identity":
            return identity_field(get_float(cfg, pre + "scale", 1.0))
        if kind == "linear":
            return linear_field(_matrix(cfg, pre + "matrix"))
        if kind == "p_laplace":
            return p_laplace_field(get_float(cfg, pre + "p"), get_float(cfg, pre + "mu", 0.0))
        if kind == "quartic":
            return quartic_field(_matrix(cfg, pre + "matrix") if pre + "matrix" in cfg else None)
        if kind == "weighted_p_laplace":
            amp = get_float(cfg, pre + "amp", 0.0)
            if amp < 0:
                raise ConfigError(f"{pre}amp must be nonnegative")
            N = get_int(cfg, "components", 3)
            dim = get_int(cfg, "mesh.dim", 3)
            eye = np.eye(N * dim)

            def Bx(x):
                return (1.0 + amp * x[..., 0])[..., None, None] * eye

            return weighted_p_laplace_field(Bx, get_float(cfg, pre + "p"), 1.0, 1.0 + amp)
        if kind == "scaled_b":
            if base is None:
                raise ConfigError(f"{pre}kind = scaled_b needs field.b defined")
            amp = get_float(cfg, pre + "amp")
            if amp < 0:
                raise ConfigError(f"{pre}amp must be nonnegative")
            return scaled_field(base, lambda x: 1.0 + amp * np.sin(math.pi * x[..., 0]) ** 2, 1.0, 1.0 + amp)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{pre}*: {exc}") from exc
    raise ConfigError(f"{pre}kind: unknown field kind {kind!r}")


def build_fields(cfg: dict) -> tuple[StructureField, StructureField]:
    b = build_field(cfg, "b")
    a = build_field(cfg, "a", base=b)
    return a, b


def build_rhs(cfg: dict, components: int, dim: int):
    from . import experiments as ex

    flux_key = cfg.get("rhs.flux", "zero")
    if flux_key == "zero":
        flux = None
    elif flux_key == "linear_experiment":
        flux = ex.linear_flux
    elif flux_key == "smooth":
        flux = ex.smooth_exact_grad
    elif flux_key.startswith("constant:"):
        vals = np.array(get_floats({"v": flux_key.split(":", 1)[1]}, "v"))
        if vals.size != components * dim:
            raise ConfigError(f"rhs.flux: constant needs {components * dim} entries")
        F = vals.reshape(components, dim)
        flux = lambda x: np.broadcast_to(F, (*x.shape[:-1], components, dim))  # noqa: E731
    else:
        raise ConfigError(f"rhs.flux: unknown value {flux_key!r}")

    src_key = cfg.get("rhs.source", "zero")
    if src_key == "zero":
        source = None
    elif src_key == "nonlinear_experiment":
        source = ex.nonlinear_source
    elif src_key.startswith("constant:"):
        vals = np.array(get_floats({"v": src_key.split(":", 1)[1]}, "v"))
        if vals.size != components:
            raise ConfigError(f"rhs.source: constant needs {components} entries")
        source = lambda x: np.broadcast_to(vals, (*x.shape[:-1], components))  # noqa: E731
    else:
        raise ConfigError(f"rhs.source: unknown value {src_key!r}")
    return flux, source


def build_reaction(cfg: dict):
    raw = cfg.get("reaction", "none")
    if raw == "none":
        return None
    if raw.startswith("power:"):
        try:
            q = float(raw.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"reaction: bad exponent in {raw!r}") from exc
        if q < 0:
            raise ConfigError("reaction: exponent must be nonnegative")
        return PowerReaction(q)
    raise ConfigError(f"reaction: unknown value {raw!r}")


def parse_gamma(raw: str) -> float | str:
    if raw == "auto":
        return "auto"
    try:
        g = float(raw)
    except ValueError as exc:
        raise ConfigError(f"gamma: expected a positive number or 'auto', got {raw!r}") from exc
    if not g > 0:
        raise ConfigError("gamma: must be positive")
    return g


def step_config(cfg: dict) -> StepConfig:
    try:
        return StepConfig(
            linear_tol=get_float(cfg, "solver.linear_tol", 1e-12),
            newton_tol=get_float(cfg, "solver.newton_tol", 1e-11),
            max_newton=get_int(cfg, "solver.max_newton", 50),
        )
    except ValueError as exc:
        raise ConfigError(f"solver.*: {exc}") from exc


def sample_spec(cfg: dict, components: int, dim: int) -> SampleSpec:
    return SampleSpec(
        n_x=get_int(cfg, "sample.n_x", 16), n_z=get_int(cfg, "sample.n_z", 64),
        seed=get_int(cfg, "sample.seed", 0), dim=dim, components=components,
    )


@dataclass
class SolveSetup:
    problem: object
    tol: float
    max_iter: int
    step: StepConfig
    lq: list


def build_problem(cfg: dict, gamma_override=None, level_override=None) -> SolveSetup:
    from .iteration import Problem
    from .mesh import MeshTooLargeError, unit_cube_mesh

    dim = get_int(cfg, "mesh.dim", 3)
    if dim not in (2, 3):
        raise ConfigError("mesh.dim: must be 2 or 3")
    level = level_override if level_override is not None else get_int(cfg, "mesh.level")
    if level < 0:
        raise ConfigError("mesh.level: must be nonnegative")
    N = get_int(cfg, "components", 3)
    if N < 1:
        raise ConfigError("components: must be at least 1")
    a, b = build_fields(cfg)
    flux, source = build_rhs(cfg, N, dim)
    gamma = gamma_override if gamma_override is not None else parse_gamma(cfg.get("gamma", "auto"))
    tol = get_float(cfg, "stop.tol", 1e-9)
    if tol <= 0:
        raise ConfigError("stop.tol: must be positive")
    max_iter = get_int(cfg, "stop.max_iter", 1000)
    if max_iter < 1:
        raise ConfigError("stop.max_iter: must be at least 1")
    try:
        mesh = unit_cube_mesh(dim, level)
    except MeshTooLargeError as exc:
        raise ConfigError(f"mesh.level: {exc}") from exc
    p = get_float(cfg, "p", b.meta.p)
    try:
        prob = Problem(mesh=mesh, a=a, b=b, components=N, flux_rhs=flux, source=source,
                       reaction=build_reaction(cfg), gamma=gamma, p=p)
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from exc
    return SolveSetup(prob, tol, max_iter, step_config(cfg), get_floats(cfg, "diagnostics.lq"))
