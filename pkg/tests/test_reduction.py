import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmcreduce import harmonics as hm
from cmcreduce import reduction as red
from cmcreduce.metrics import (
    MetricSpec,
    SigmaField,
    chi_bump_slope,
    flat,
    quadrupole_sigma,
    random_bump_sigma,
    schwarzschild,
    thm17_metric,
)
from cmcreduce.quadrature import BallRule, SphereRule, integrate_ball, integrate_sphere

# 60-digit evaluations of the closed form
F0_ORACLE = {
    1.5: (-0.020925514998426116047, 0.10978117673606005906),
    2.0: (-0.0025901212047434599503, 0.0088514319413601043341),
    2.999: (-0.00018345595936418540015, 0.00038693041544667550567),
    3.0: (-0.00018306950832696628332, 0.00038597211525081769172),
    5.0: (-7.721611356049875445e-6, 9.4360393049095503202e-6),
    10.0: (-1.1582584681908735179e-7, 6.9806831792352917078e-8),
    1000.0: (-1.1428586666682828299e-19, 6.8571550476352092544e-22),
    10000.0: (-1.1428571580952382569e-25, 6.8571429790476206638e-29),
}

QUAD = MetricSpec(sigma=quadrupole_sigma(), name="quadrupole")


# --- F0 ----------------------------------------------------------------------

@pytest.mark.parametrize("t", sorted(F0_ORACLE))
def test_F0_against_high_precision(t):
    f, df = F0_ORACLE[t]
    assert red.F0(t) == pytest.approx(f, rel=1e-10)
    assert red.F0_prime(t) == pytest.approx(df, rel=1e-10)


def test_F0_decays_like_inverse_sixth_power():
    for t in (1e3, 1e4):
        assert red.F0(t) * t**6 == pytest.approx(-4 / 35, rel=1e-5)
    assert abs(red.F0(1e4)) < abs(red.F0(1e3))


def test_F0_prime_positive_at_5():
    assert red.F0_prime(5.0) > 0


@pytest.mark.parametrize("t", [2.0, 5.0, 10.0])
def test_F0_prime_matches_differences(t):
    h = 1e-3 * t
    fd = (red.F0(t + h) - red.F0(t - h)) / (2 * h)
    fd2 = (red.F0(t + h / 2) - red.F0(t - h / 2)) / h
    assert (4 * fd2 - fd) / 3 == pytest.approx(red.F0_prime(t), rel=1e-8)


def test_F0_continuous_at_switch():
    assert red.F0(3.0 - 1e-12) == pytest.approx(red.F0(3.0), rel=1e-9)


def test_F0_vectorised_and_domain():
    v = red.F0(np.array([2.0, 5.0]))
    assert v.shape == (2,)
    with pytest.raises(ValueError):
        red.F0(1.0)


# --- F_sigma -------------------------------------------------------------------

def test_F_sigma_zero_without_sigma():
    assert red.F_sigma(schwarzschild(), [0, 0, 3.0], 10.0) == 0.0
    assert red.radial_variation_rhs(schwarzschild(), [0, 0, 3.0], 10.0) == 0.0


def _trace_sigma(f):
    return SigmaField(lambda x: f(x)[:, None, None] * np.eye(3))


def test_F_sigma_pure_trace():
    f = lambda x: np.exp(-np.sum((x - [1.0, 0.5, 28.0]) ** 2, axis=1) / 50.0)
    spec = MetricSpec(sigma=_trace_sigma(f))
    xi, lam = np.array([0.0, 0.0, 3.0]), 10.0
    a = lam * xi
    ref = integrate_sphere(f, a, lam, SphereRule.for_degree(60)) \
        - 3.0 / lam * integrate_ball(f, a, lam, BallRule.for_degree(60))
    assert red.F_sigma(spec, xi, lam) == pytest.approx(ref, rel=1e-9)


def test_F_sigma_vanishes_for_support_outside_ball():
    f = lambda x: np.where(np.linalg.norm(x, axis=1) > 100.0, 1.0, 0.0)
    spec = MetricSpec(sigma=_trace_sigma(f))
    assert red.F_sigma(spec, [0.0, 0.0, 3.0], 10.0) == 0.0


@pytest.mark.parametrize("seed", [0, 1])
def test_radial_variation_identity(seed):
    xi, lam = 2.0 * np.array([0.3, -0.4, 1.0]) / np.linalg.norm([0.3, -0.4, 1.0]), 20.0
    spec = MetricSpec(sigma=random_bump_sigma(seed, lam * xi, lam))
    fd = red.F_sigma_radial_fd(spec, xi, lam)
    rhs = red.radial_variation_rhs(spec, xi, lam)
    assert abs(fd - rhs) <= 1e-8 * max(1.0, abs(fd))


# --- solver ----------------------------------------------------------------------

def test_flat_solve_is_round_sphere():
    sol = red.solve_graph(flat(), [3.0, 0.0, 0.0], 10.0)
    assert sol.u.sup() == 0.0
    assert sol.r == pytest.approx(10.0, rel=1e-14)
    assert sol.area == pytest.approx(4 * math.pi * 100, rel=1e-14)
    assert sol.area_deficit == 0.0


def test_solver_rejects_small_xi():
    with pytest.raises(ValueError):
        red.solve_graph(schwarzschild(), [0.0, 0.0, 0.5], 10.0)


def test_solver_reports_non_convergence():
    with pytest.raises(red.ConvergenceError):
        red.solve_graph(schwarzschild(), [0.0, 0.0, 3.0], 20.0,
                        red.SolverOptions(max_iter=1, tol_H_scale=1e-14))


@pytest.mark.parametrize("spec", [schwarzschild(), QUAD], ids=["schwarzschild", "quadrupole"])
def test_restart_is_a_fixed_point(spec):
    sol = red.solve_graph(spec, [0.0, 0.0, 8.0], 40.0)
    again = red.solve_graph(spec, [0.0, 0.0, 8.0], 40.0, initial=sol)
    assert again.iterations <= 2
    assert again.area_deficit == pytest.approx(sol.area_deficit, rel=1e-9)


def test_schwarzschild_constant_at_10():
    D = red.reduced_deficit(schwarzschild(), [0.0, 0.0, 10.0], 40.0)
    assert D * 10.0**6 == pytest.approx(-8 * math.pi / 35, rel=0.2)


@settings(max_examples=4, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_rotation_equivariance(v):
    spec = schwarzschild()
    e = np.asarray(v) / np.linalg.norm(v)
    D = red.reduced_deficit(spec, 6.0 * e, 20.0)
    D0 = red.reduced_deficit(spec, [0.0, 0.0, 6.0], 20.0)
    assert D == pytest.approx(D0, rel=1e-7)


def test_u_projection_matches_closed_form_schwarzschild():
    lam, res = 40.0, {}
    for t in (8.0, 16.0):
        sol = red.solve_graph(schwarzschild(), [0.0, 0.0, t], lam)
        a = np.array([0.0, 0.0, lam * t])
        y = sol.r * sol.u.basis.rule.nodes
        an = lam * t
        closed = (sol.r / 2) * (an**2 * sol.r**2 - 3 * (y @ a) ** 2) / an**5
        res[t] = np.max(np.abs(hm.project(sol.u, "L2").values - closed))
    assert res[8.0] / res[16.0] >= 2**4 * 0.8


def test_u_estimates_with_quadrupole():
    lam, ratios, high, psi = 40.0, [], [], []
    for t in (8.0, 16.0, 32.0):
        sol = red.solve_graph(QUAD, [0.0, 0.0, t], lam)
        ratios.append(sol.u.sup() / (1 / (lam * t**2) + t**-3))
        high.append(hm.project(sol.u, "L>2").sup() / (1 / (lam * t**3) + t**-4))
        psi.append(abs(sol.psi) * lam**2 * t**2)
    assert max(ratios) / min(ratios) < 1.3
    assert max(high) / min(high) < 1.3
    assert all(p < 0.1 for p in psi)


# --- predictors ------------------------------------------------------------------

def test_prediction_schwarzschild():
    rep = red.predict_lsreduction(schwarzschild(), [0.0, 0.0, 5.0], 40.0)
    assert rep.predicted_deficit == pytest.approx(-(8 * math.pi / 35) * 5.0**-6)
    assert rep.residual is None
    assert red.predict_lsradial(schwarzschild(), [0.0, 0.0, 5.0], 40.0) \
        == pytest.approx((48 * math.pi / 35) * 5.0**-6)


def test_radial_prediction_residual_scaling():
    spec = schwarzschild()
    res = []
    for t, lam in ((6.0, 30.0), (12.0, 60.0)):
        d, _ = red.radial_derivative(spec, [0.0, 0.0, t], lam)
        res.append(abs(d - red.predict_lsradial(spec, [0.0, 0.0, t], lam)))
    # O(lam^-1 t^-6) + O(t^-7) at fixed lam/t shrinks by 2^7
    assert res[0] / res[1] >= 2**7 * 0.7


def test_curvature_term_second_construction():
    k = 1
    lam = 10.0**k
    spec = thm17_metric()
    chi = chi_bump_slope()
    for t in (4.5, 5.0, 5.5):
        terms = red.predict_lsreduction(spec, [0.0, 0.0, lam * t], lam).terms
        ref = -(16 * math.pi / 15) * 10.0 ** (-6 * k) * chi(t)
        assert terms["R_term"] == pytest.approx(ref, rel=0.02)
        assert abs(terms["R_term"]) > 10 * abs(terms["mass_term"])


def test_radial_prediction_second_construction_sign_at_5():
    # the curvature-gradient term dominates with the sign of -d_r R; R ~ chi, chi'(5) = -1
    lam = 10.0
    pred = red.predict_lsradial(thm17_metric(), [0.0, 0.0, 50.0], lam)
    assert pred > 0
    assert pred / 5.0 == pytest.approx((16 * math.pi / 15) * 1e-6, rel=0.05)


# --- coefficient fit -------------------------------------------------------------

def test_fit_with_supplied_deficits_recovers_constant():
    lams = [20.0, 40.0, 80.0]
    xis = [2.0, 3.0, 5.0]
    deficits = {(f"{t:g}", lam): 2 * math.pi * red.F0(t) + 0.01 * red.F0(t) / lam
                for t in xis for lam in lams}
    res = red.fit_BE_coefficient(schwarzschild(), xis, lams, deficits=deficits)
    assert res.c_F0 == pytest.approx(2 * math.pi, rel=1e-8)
    assert res.supported_constant == "2pi"
    assert res.c_Fsigma is None
    assert res.diagnostics["ratio_spread"] < 1e-8
