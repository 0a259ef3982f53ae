"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 inadmissible field pair,
3 outer/inner non-convergence, 4 a verification (lemma sweep or field
audit) found violations.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys

from . import experiments as ex
from .config import ConfigError, build_field, build_fields, build_problem, get_int, load_config, parse_gamma, sample_spec
from .constants import kab_for_fields
from .fem import norm, write_solution
from .fields import field_check
from .inequalities import verify_all
from .iteration import InadmissibleError, IterationError, iterate
from .solvers import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_INADMISSIBLE, EXIT_NONCONVERGED, EXIT_VIOLATION = 0, 1, 2, 3, 4

log = logging.getLogger("koshelev")


def _g(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _h(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.5g}"
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_g(v) for v in r])
    return buf.getvalue()


def _table(header, rows) -> str:
    cells = [list(header)] + [[_h(v) for v in r] for r in rows]
    widths = [max(len(c[k]) for c in cells) for k in range(len(header))]
    lines = ["  ".join(c[k].rjust(widths[k]) for k in range(len(header))) for c in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _emit(args, name: str, header, rows):
    print(_table(header, rows))
    text = _csv_text(header, rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write(text)
    else:
        print()
        print(text, end="")


def _gamma_arg(raw):
    try:
        return parse_gamma(raw)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


# --------------------------------------------------------------------------


def cmd_constants(args) -> int:
    cfg = load_config(_need_config(args))
    a, b = build_fields(cfg)
    N = get_int(cfg, "components", 3)
    dim = get_int(cfg, "mesh.dim", 3)
    spec = sample_spec(cfg, N, dim)
    if args.seed is not None:
        spec.seed = args.seed
    rep = kab_for_fields(a, b, spec)
    header = ["lambda_ab", "Lambda_ab", "K_ab", "gamma_star", "sigma", "K_gamma", "rate_R", "admissible",
              "p", "lambda_b", "Lambda_b", "symmetric", "certified", "samples"]
    row = [rep.lambda_ab, rep.Lambda_ab, rep.K_ab, rep.gamma_star, rep.sigma, rep.K_gamma, rep.rate_R,
           rep.admissible, rep.p, rep.lambda_b, rep.Lambda_b, rep.symmetric, rep.certified, rep.samples]
    _emit(args, "constants.csv", header, [row])
    for note in rep.notes:
        print(f"note: {note}", file=sys.stderr)
    return EXIT_OK if rep.admissible else EXIT_INADMISSIBLE


def cmd_solve(args) -> int:
    cfg = load_config(_need_config(args))
    level = args.level[-1] if args.level else None
    setup = build_problem(cfg, args.gamma, level)
    tol = args.tol if args.tol is not None else setup.tol
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    trace_path = os.path.join(out, cfg.get("export.trace", "trace.csv"))
    sol_path = os.path.join(out, cfg.get("export.solution", "solution.txt"))
    try:
        u, tr = iterate(setup.problem, tol=tol, max_iter=setup.max_iter, lq=setup.lq, cfg=setup.step,
                        allow_inadmissible=args.allow_inadmissible)
    except InadmissibleError as exc:
        print(f"refused: {exc} (pass --allow-inadmissible to override)", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except IterationError as exc:
        exc.trace.write_csv(trace_path)
        print(f"error: {exc}; partial trace in {trace_path}", file=sys.stderr)
        return EXIT_NONCONVERGED
    tr.write_csv(trace_path)
    write_solution(u, sol_path)
    last = tr.steps[-1] if tr.steps else None
    print(f"gamma {tr.gamma:.5g}  steps {tr.iterations}  converged {_h(tr.converged)}  "
          f"last diff {_h(last.diff if last else math.nan)}")
    print(f"solution: {sol_path}\ntrace: {trace_path}")
    return EXIT_OK if tr.converged else EXIT_NONCONVERGED


def cmd_experiment_linear(args) -> int:
    levels = args.level or [1, 2, 3, 4]
    gamma = 2.0 / 3.0 if args.gamma in (None, "auto") else args.gamma
    tol = args.tol if args.tol is not None else 1e-9
    rows, _, traces = ex.run_linear(levels, gamma, tol)
    header = ["level", "h", "gamma", "error_h1", "iterations", "converged"]
    _emit(args, f"linear_gamma_{gamma:.4g}.csv", header,
          [[r.level, r.h, r.gamma, r.error_h1, r.iterations, r.converged] for r in rows])
    if args.out:
        for r, tr in zip(rows, traces):
            tr.write_csv(os.path.join(args.out, f"linear_trace_gamma_{gamma:.4g}_level_{r.level}.csv"))
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NONCONVERGED


def cmd_experiment_nonlinear(args) -> int:
    levels = args.level or [1, 2, 3]
    gamma = 0.65 if args.gamma in (None, "auto") else args.gamma
    tol = args.tol if args.tol is not None else 1e-9
    summary = []
    for lv in levels:
        res = ex.run_nonlinear(lv, gamma, tol)
        steps = res.trace.steps
        rows = [[s.n, s.diff, s.ratio, s.aposteriori, d] for s, d in zip(steps, res.distances)]
        header = ["n", "diff_W1p", "ratio", "aposteriori", "dist_direct_h1"]
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, f"nonlinear_trace_level_{lv}.csv"), "w") as fh:
                fh.write(_csv_text(header, rows))
        summary.append([lv, gamma, res.trace.iterations, res.trace.converged, res.final_distance, res.direct_newton_steps])
    _emit(args, "nonlinear_summary.csv", ["level", "gamma", "iterations", "converged", "final_dist_h1", "direct_newton_steps"], summary)
    return EXIT_OK if all(r[3] for r in summary) else EXIT_NONCONVERGED


def cmd_multilevel(args) -> int:
    levels = args.level or [1, 3]
    k0, kmax = min(levels), max(levels)
    gamma = 0.65 if args.gamma in (None, "auto") else args.gamma
    u_ml, traces = ex.run_multilevel(k0, kmax, gamma)
    final_tol = ex.multilevel_tolerance(kmax)
    single_tol = args.tol if args.tol is not None else 1e-9
    u_sl, tr_sl = iterate(ex.nonlinear_problem(kmax, gamma), tol=single_tol, allow_inadmissible=True)
    rows = [[k0 + i, ex.multilevel_tolerance(k0 + i), tr.iterations, tr.converged] for i, tr in enumerate(traces)]
    _emit(args, "multilevel.csv", ["level", "tol", "iterations", "converged"], rows)
    gap = norm(u_ml - u_sl, "W1p", 6.0)
    print(f"\nsingle-level at tol {single_tol:g}: {tr_sl.iterations} iterations; "
          f"multilevel finest level: {traces[-1].iterations}; W1,6 gap {gap:.5g} (final tol_k {final_tol:g})")
    ok = all(tr.converged for tr in traces) and tr_sl.converged
    return EXIT_OK if ok else EXIT_NONCONVERGED


def cmd_verify_lemmas(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = verify_all(args.samples, seed)
    header = ["sweep", "samples", "violations", "worst_slack", "passed"]
    rows = [[r.name, r.samples, r.violations, r.worst_slack, r.passed] for r in results]
    _emit(args, "lemmas.csv", header, rows)
    for r in results:
        if r.extra:
            details = ", ".join(f"{k}={_h(v)}" for k, v in r.extra.items() if k != "ok")
            print(f"{r.name}: {details}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VIOLATION


def cmd_check_field(args) -> int:
    cfg = load_config(_need_config(args))
    which = args.field
    base = build_field(cfg, "b") if which == "a" and cfg.get("field.a.kind") == "scaled_b" else None
    f = build_field(cfg, which, base=base)
    N = f.components or get_int(cfg, "components", 3)
    dim = get_int(cfg, "mesh.dim", 3)
    spec = sample_spec(cfg, N, dim)
    if args.seed is not None:
        spec.seed = args.seed
    if args.samples:
        spec.n_x, spec.n_z = 1, args.samples
    rep = field_check(f, spec)
    header = ["field", "samples", "lambda", "Lambda", "worst_lower", "worst_upper", "worst_growth", "worst_fd", "passed"]
    m = f.meta
    _emit(args, "field_check.csv", header, [[m.name, rep.samples, m.lam, m.Lam, rep.worst_lower, rep.worst_upper,
                                            rep.worst_growth, rep.worst_fd, rep.passed]])
    for fail in rep.failures:
        print(f"violation: {fail['check']} at {fail['count']} samples; first z = {fail['z']}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_VIOLATION


def _need_config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    return args.config


COMMANDS = {
    "constants": cmd_constants,
    "solve": cmd_solve,
    "experiment-linear": cmd_experiment_linear,
    "experiment-nonlinear": cmd_experiment_nonlinear,
    "multilevel": cmd_multilevel,
    "verify-lemmas": cmd_verify_lemmas,
    "check-field": cmd_check_field,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koshelev", description="Relaxed fixed-point FE solver for quasilinear elliptic systems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--gamma", type=_gamma_arg, help="relaxation parameter or 'auto'")
        p.add_argument("--level", type=int, action="append", help="mesh level i (h = 2^-i); repeatable")
        p.add_argument("--tol", type=float, help="outer tolerance on ||u_{n+1} - u_n||_{W^{1,p}}")
        p.add_argument("--seed", type=int, help="random seed for sampling")
        p.add_argument("--out", help="directory for CSV / solution output")
        p.add_argument("--allow-inadmissible", action="store_true", help="run even without a contraction guarantee")
        if name == "verify-lemmas":
            p.add_argument("--samples", type=int, default=10_000, help="samples per lemma")
        if name == "check-field":
            p.add_argument("--samples", type=int, default=0, help="number of z samples (default from config)")
            p.add_argument("--field", choices=("a", "b"), default="a", help="which configured field to audit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InadmissibleError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except (ConvergenceError, IterationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
