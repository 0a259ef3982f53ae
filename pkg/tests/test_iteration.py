import csv
import math

import numpy as np
import pytest

from koshelev.experiments import linear_problem, smooth_exact_grad
from koshelev.fem import P1Function, boundary_dof_mask, norm
from koshelev.fields import identity_field, linear_field, p_laplace_field, quartic_field, scaled_field
from koshelev.iteration import (
    InadmissibleError,
    IterationError,
    Problem,
    aposteriori,
    iterate,
    multilevel,
    rate_estimate,
    solve_direct,
)
from koshelev.mesh import unit_cube_mesh
from koshelev.solvers import StepConfig


def _sym_problem(level=3, gamma="auto"):
    return Problem(mesh=unit_cube_mesh(2, level), a=linear_field(np.diag([1.0, 2.0])), b=identity_field(),
                   components=2, flux_rhs=lambda x: smooth_exact_grad(x)[..., :2, :], gamma=gamma, p=2.0)


def test_identical_fields_converge_in_one_step():
    ident = identity_field()
    prob = Problem(mesh=unit_cube_mesh(3, 2), a=ident, b=ident, components=3, flux_rhs=smooth_exact_grad)
    u, tr = iterate(prob, tol=1e-12)
    # step 1 reaches the solution, step 2 confirms a zero update
    assert tr.converged and tr.iterations == 2
    assert tr.steps[1].diff < 1e-12 and tr.gamma == 1.0


def test_starting_at_the_solution_is_a_fixed_point():
    prob = _sym_problem(3)
    u_dir, _ = solve_direct(prob)
    u, tr = iterate(prob, u0=u_dir, tol=1e-10)
    assert tr.iterations == 1 and tr.steps[0].diff < 1e-10


def test_limit_is_gamma_independent_and_bounded():
    sols = []
    for g in (0.4, 2.0 / 3.0):
        u, tr = iterate(_sym_problem(3, g), tol=1e-11)
        assert tr.converged
        grads = [s.grad_lp for s in tr.steps]
        assert max(grads) < 10 * grads[-1]
        sols.append(u)
    assert norm(sols[0] - sols[1], "H1") < 1e-9


def test_symmetric_rate_matches_prediction():
    u, tr = iterate(_sym_problem(3), tol=1e-12)
    assert tr.report.K_ab == pytest.approx(1.0 / 3.0)
    assert rate_estimate(tr) <= 1.0 / 3.0 + 0.02


def test_rate_estimate_synthetic():
    assert rate_estimate(0.5 ** np.arange(20)) == pytest.approx(0.5)
    assert rate_estimate([1.0, 0.9, 0.1, 0.05, 0.025]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rate_estimate([1.0, 0.0, 0.0])


def test_aposteriori_exponent():
    m = unit_cube_mesh(3, 1)
    u = P1Function(m, np.zeros((m.n_vertices, 1)))
    v = P1Function(m, m.vertices[:, :1] * 2.0)
    assert aposteriori(v, u, 2.0) == pytest.approx(2.0)
    assert aposteriori(v, u, 4.0) == pytest.approx(math.sqrt(2.0))


def test_trace_csv_and_lq(tmp_path):
    u, tr = iterate(_sym_problem(2), tol=1e-8, lq=(2, 4))
    tr.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["n", "diff_W1p", "ratio", "aposteriori", "lq_2", "lq_4", "inner_iterations"]
    assert len(rows) == tr.iterations + 1
    assert float(rows[-1][1]) == tr.steps[-1].diff
    assert tr.steps[-1].lq_norms[0] == pytest.approx(norm(u, "W1p_semi", 2.0))


def test_boundary_values_stay_zero():
    u, _ = iterate(_sym_problem(2), tol=1e-8)
    assert not np.any(u.dofs[boundary_dof_mask(u.mesh, 2)])


def test_inadmissible_pairs_are_refused_in_auto_mode():
    with pytest.raises(InadmissibleError) as exc:
        iterate(linear_problem(1, "auto"))
    assert exc.value.report is not None and not exc.value.report.admissible
    b = p_laplace_field(3.0, 1.0)
    a = scaled_field(b, lambda x: 1.0 + 0.5 * x[..., 0], 1.0, 1.5)
    prob = Problem(mesh=unit_cube_mesh(2, 1), a=a, b=b, components=3)
    with pytest.raises(InadmissibleError):
        iterate(prob)


def test_manual_gamma_on_inadmissible_pair_warns(caplog):
    with caplog.at_level("WARNING"):
        u, tr = iterate(linear_problem(1, 2.0 / 3.0), tol=1e-9)
    assert tr.converged and "without a contraction guarantee" in caplog.text


def test_inner_failure_is_reported_with_step():
    b = quartic_field()
    prob = Problem(mesh=unit_cube_mesh(3, 1), a=quartic_field(2 * np.eye(3)), b=b, components=3,
                   source=lambda x: 50.0 * np.ones((*x.shape[:-1], 3)), gamma=0.5, p=6.0)
    with pytest.raises(IterationError) as exc:
        iterate(prob, cfg=StepConfig(max_newton=1), allow_inadmissible=True)
    assert exc.value.step == 1


def test_multilevel_single_level_equals_iterate():
    prob = _sym_problem(2)
    u1, (tr1,) = multilevel(prob, 2, [1e-9])
    u2, tr2 = iterate(prob, tol=1e-9)
    np.testing.assert_array_equal(u1.values, u2.values)
    assert tr1.diffs.tolist() == tr2.diffs.tolist()


def test_multilevel_validates_tolerances():
    with pytest.raises(ValueError):
        multilevel(_sym_problem(1), 2, [1e-8, 1e-6])
    with pytest.raises(ValueError):
        multilevel(_sym_problem(1), 2, [1e-8])


def test_multilevel_warm_start_saves_iterations():
    prob = _sym_problem(1)
    u, traces = multilevel(prob, 4, lambda k: 10.0 ** -(k + 4))
    assert [t.level for t in traces] == [1, 2, 3, 4]
    _, single = iterate(prob.on_mesh(unit_cube_mesh(2, 4)), tol=1e-8)
    assert traces[-1].iterations < single.iterations


def test_callback_sees_every_step():
    seen = []
    iterate(_sym_problem(2), tol=1e-8, callback=lambda n, u, tr: seen.append((n, len(tr))))
    assert all(n == k for n, k in seen) and seen[0][0] == 1
