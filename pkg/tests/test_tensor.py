import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from koshelev.tensor import (
    NotPositiveDefiniteError,
    NotSymmetricError,
    frob2,
    generalized_eigen_bounds,
    operator_norm,
    sym_eigen_bounds,
    v_mu,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_v_mu_p2_is_identity(rng):
    v = rng.standard_normal((3, 3))
    np.testing.assert_allclose(v_mu(2.0, 0.7, v), v)


def test_v_mu_p4_scales_by_norm():
    np.testing.assert_allclose(v_mu(4.0, 0.0, np.array([[2.0, 0.0]])), [[4.0, 0.0]])


def test_v_mu_zero_vector_with_zero_mu():
    np.testing.assert_array_equal(v_mu(1.5, 0.0, np.zeros((2, 2))), np.zeros((2, 2)))


@pytest.mark.parametrize("p,mu", [(0.5, 0.0), (1.0, 1.0), (2.0, -1.0)])
def test_v_mu_rejects_bad_parameters(p, mu):
    with pytest.raises(ValueError):
        v_mu(p, mu, np.ones((1, 2)))


@settings(max_examples=200, deadline=None)
@given(arrays(float, (3, 2), elements=finite), st.floats(1.01, 8), st.floats(0, 10))
def test_v_mu_squared_norm_identity(v, p, mu):
    lhs = frob2(v_mu(p, mu, v))
    rhs = (mu * mu + frob2(v)) ** ((p - 2) / 2) * frob2(v) if frob2(v) > 0 else 0.0
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


def test_sym_eigen_bounds_trivial():
    assert sym_eigen_bounds(np.eye(4)) == (1.0, 1.0)
    assert sym_eigen_bounds(np.diag([1.0, 2.0, 3.0])) == pytest.approx((1.0, 3.0))


def test_sym_eigen_bounds_bracket_rayleigh_quotients(rng):
    M = rng.standard_normal((6, 6))
    M = M + M.T
    lo, hi = sym_eigen_bounds(M)
    v = rng.standard_normal((100, 6))
    rq = np.einsum("ki,ij,kj->k", v, M, v) / np.sum(v * v, axis=1)
    assert np.all(rq >= lo - 1e-12) and np.all(rq <= hi + 1e-12)


def test_sym_eigen_bounds_rejects_nonsymmetric():
    with pytest.raises(NotSymmetricError):
        sym_eigen_bounds(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_operator_norm_trivial():
    assert operator_norm(np.eye(3)) == pytest.approx(1.0)
    assert operator_norm(np.diag([1.0, -3.0])) == pytest.approx(3.0)


def test_operator_norm_sampling_oracle(rng):
    M = rng.standard_normal((4, 4))
    v = rng.standard_normal((10_000, 4))
    v /= np.linalg.norm(v, axis=1)[:, None]
    sampled = np.max(np.linalg.norm(v @ M.T, axis=1))
    nrm = operator_norm(M)
    assert sampled <= nrm + 1e-12
    assert sampled == pytest.approx(nrm, abs=1e-2 * nrm)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (4, 4), elements=finite))
def test_operator_norm_transpose_invariant(M):
    assert operator_norm(M) == pytest.approx(operator_norm(M.T), rel=1e-12, abs=1e-300)


def test_generalized_eigen_bounds_trivial():
    assert generalized_eigen_bounds(np.eye(2), np.diag([1.0, 2.0])) == pytest.approx((1.0, 2.0))
    assert generalized_eigen_bounds(2 * np.eye(3), np.eye(3)) == pytest.approx((0.5, 0.5))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_generalized_eigen_bounds_characteristic_polynomial(rng, n):
    Bh = rng.integers(-3, 4, (n, n))
    B = sympy.Matrix(Bh.T @ Bh + n * np.eye(n, dtype=int))
    Ah = rng.integers(-3, 4, (n, n))
    A = sympy.Matrix(Ah + Ah.T)
    lam = sympy.symbols("lam")
    roots = sorted(float(r) for r in sympy.Poly((A - lam * B).det(), lam).nroots(n=30))
    lo, hi = generalized_eigen_bounds(np.array(B, dtype=float), np.array(A, dtype=float))
    assert lo == pytest.approx(roots[0], rel=1e-10, abs=1e-12)
    assert hi == pytest.approx(roots[-1], rel=1e-10, abs=1e-12)


def test_generalized_matches_standard_for_identity(rng):
    A = rng.standard_normal((5, 5))
    A = A + A.T
    np.testing.assert_allclose(generalized_eigen_bounds(np.eye(5), A), sym_eigen_bounds(A), rtol=1e-10)


def test_generalized_rejects_indefinite_b():
    with pytest.raises(NotPositiveDefiniteError):
        generalized_eigen_bounds(np.diag([1.0, -1.0]), np.eye(2))
