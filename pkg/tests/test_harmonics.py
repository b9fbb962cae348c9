import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmcreduce.harmonics import (
    SUBSPACES,
    HarmonicBasis,
    KernelViolation,
    analyze,
    apply_jacobi,
    invert_jacobi,
    n_coefficients,
    project,
    synthesize,
)

L = 10


@pytest.fixture(scope="module")
def basis():
    return HarmonicBasis.build(L)


def random_field(basis, seed, lmin=0):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n_coefficients(basis.L))
    c[basis.degrees < lmin] = 0.0
    return basis.from_coefficients(c)


def test_orthonormal(basis):
    w = basis.rule.weights
    G = basis.Y.T @ (w[:, None] * basis.Y)
    assert np.allclose(G, np.eye(G.shape[0]), atol=1e-13)


def test_constant_has_only_l0(basis):
    f = analyze(np.ones(len(basis.rule)), basis)
    assert f.coeffs[basis.degrees == 0][0] == pytest.approx(math.sqrt(4 * math.pi))
    assert np.allclose(f.coeffs[basis.degrees > 0], 0.0, atol=1e-14)


def test_height_function_is_degree_one(basis):
    f = analyze(basis.rule.nodes[:, 2], basis)
    assert np.allclose(f.coeffs[basis.degrees != 1], 0.0, atol=1e-14)
    assert np.linalg.norm(f.coeffs[basis.degrees == 1]) > 0.1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip(seed):
    b = HarmonicBasis.build(L)
    f = random_field(b, seed)
    g = analyze(synthesize(f), b)
    assert np.allclose(g.coeffs, f.coeffs, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(SUBSPACES))
def test_projection_idempotent_and_orthogonal(seed, sub):
    b = HarmonicBasis.build(L)
    f = random_field(b, seed)
    p = project(f, sub)
    assert np.allclose(project(p, sub).coeffs, p.coeffs)
    assert abs(np.dot((f - p).coeffs, p.coeffs)) < 1e-12 * (1 + f.norm() ** 2)


def test_linear_functions_live_in_l1(basis):
    y = basis.rule.nodes @ np.array([0.3, -1.2, 0.7])
    f = analyze(y, basis)
    assert np.allclose(project(f, "L1").values, y, atol=1e-13)
    assert np.allclose((project(f, "L0") + project(f, "L2")).values, 0.0, atol=1e-13)


def test_l2_projection_of_quadratic_form_is_tracefree_part(basis):
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 3))
    s = A + A.T
    n = basis.rule.nodes
    q = np.einsum("ki,ij,kj->k", n, s, n)
    p2 = project(analyze(q, basis), "L2").values
    assert np.allclose(p2, q - np.trace(s) / 3, atol=1e-13)


def test_laplacian_matches_angular_derivatives(basis):
    f = random_field(basis, 11)
    d = f.derivatives()
    th = basis.rule.theta
    lap = d["tt"] + np.cos(th) / np.sin(th) * d["t"] + d["pp"] / np.sin(th) ** 2
    assert np.allclose(lap, f.laplacian().values, atol=1e-10)


def test_jacobi_inverse_on_degree_two(basis):
    c = np.zeros(n_coefficients(L))
    c[np.flatnonzero(basis.degrees == 2)[0]] = 1.0
    rhs = basis.from_coefficients(c)
    u = invert_jacobi(rhs, 1.0)
    assert np.allclose(u.coeffs, -c / 4)


def test_jacobi_inverse_on_constant(basis):
    rhs = analyze(np.full(len(basis.rule), 3.0), basis)
    assert np.allclose(invert_jacobi(rhs, 1.0).values, 1.5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 50.0))
def test_jacobi_inverse_round_trip(seed, r):
    b = HarmonicBasis.build(L)
    f = random_field(b, seed)
    f = f - project(f, "L1")
    u = invert_jacobi(f, r)
    assert np.allclose(apply_jacobi(u, r).coeffs, f.coeffs, atol=1e-12 * (1 + f.norm()))
    assert np.allclose(project(u, "L1").coeffs, 0.0)


def test_kernel_violation(basis):
    rhs = analyze(basis.rule.nodes[:, 0], basis)
    with pytest.raises(KernelViolation):
        invert_jacobi(rhs, 2.0)


def test_unknown_subspace(basis):
    with pytest.raises(ValueError):
        project(basis.zeros(), "L7")


def test_rule_too_coarse():
    from cmcreduce.quadrature import SphereRule
    with pytest.raises(ValueError):
        HarmonicBasis.build(10, SphereRule.gauss_product(5))


def test_analyze_checks_shape(basis):
    with pytest.raises(ValueError):
        basis.analyze(np.zeros(3))
