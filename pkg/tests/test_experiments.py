import math

import numpy as np
import pytest

from cmcreduce import experiments as exp
from cmcreduce import reduction as red
from cmcreduce.metrics import flat, radial_conformal, power_tail_profile, schwarzschild, thm13_metric, thm17_metric


def test_is_psd():
    assert exp.is_psd([1.0, 2.0, 3.0])
    assert exp.is_psd([-1e-6, 1.0, 2.0])
    assert not exp.is_psd([-0.1, 1.0, 2.0])
    assert not exp.is_psd([-1.0, -2.0, -3.0])


def test_leading_terms():
    lead = exp.thm17_leading_terms(1)
    assert lead["t5"] == pytest.approx(-(2 * math.pi / 15) * 1e-6)
    assert lead["t7"] == pytest.approx((48 * math.pi / 35) * 1e-7 * 7.0**-6)


def test_schwarzschild_scan_is_increasing():
    res = exp.scan_radial(schwarzschild(), 20.0, (2.5, 8.0), n_points=4)
    assert [p.t for p in res.points] == pytest.approx([2.5, 2.5 + 5.5 / 3, 2.5 + 11 / 3, 8.0])
    assert all(p.derivative > 0 for p in res.points)
    assert not res.critical_points and not res.derivative_sign_changes()
    for p in res.points:
        # predicted d/dt = (48 pi / 35) t^-7 up to O(lam^-1 t^-6 + t^-7) corrections
        assert p.derivative == pytest.approx(p.predicted_derivative, rel=0.25)
        assert p.derivative_error < 1e-3 * abs(p.derivative)


def test_flat_scan_is_zero():
    res = exp.scan_radial(flat(), 10.0, (2.0, 3.0), n_points=2, predict=False)
    assert all(p.derivative == 0.0 and p.deficit == 0.0 for p in res.points)


def test_derivative_convention_along_scaled_rays():
    spec = schwarzschild()
    p = exp.derivative_at(spec, 20.0, 4.0, xi_scale=2.0)
    d_s, _ = red.radial_derivative(spec, [0.0, 0.0, 8.0], 20.0)
    assert p.derivative == pytest.approx(d_s / 4.0, rel=1e-6)


@pytest.mark.slow
def test_sign_change_bracket_is_refinement_stable():
    spec = thm13_metric(1.0)
    coarse = exp.scan_radial(spec, 10.0, (3.3, 3.7), n_points=2, bisect_width=0.05,
                             stability=False, predict=False)
    fine = exp.scan_radial(spec, 10.0, (3.3, 3.7), n_points=3, bisect_width=0.05,
                           stability=False, predict=False)
    assert len(coarse.critical_points) == len(fine.critical_points) == 1
    a, b = coarse.critical_points[0].bracket
    c, d = fine.critical_points[0].bracket
    assert max(a, c) < min(b, d)
    assert coarse.critical_points[0].kind == "minimum"


def test_curvature_nonnegative_thm13():
    out = exp.curvature_nonnegative(thm13_metric(1.0), 10.0, 1e8, n=2000)
    assert out["passed"] and out["min_R"] >= 0


def test_radial_convexity_diagnostics():
    schw = exp.corollary16_diagnostics(schwarzschild(), r_grid=[10.0, 100.0])
    assert schw["condition_holds"] and schw["violations"] == 0
    tail = exp.corollary16_diagnostics(radial_conformal(power_tail_profile()), r_grid=np.geomspace(2, 1e3, 30))
    # R = 8 Phi^-5 r^-5 is convex along rays
    assert tail["condition_holds"]
    pulses = exp.corollary16_diagnostics(thm17_metric(k_max=4), xi=[0.0, 0.0, 50.0], lam=10.0)
    assert not pulses["condition_holds"]
    assert pulses["violations"] > 0
    assert pulses["dr_R"] != 0.0


def test_scan_result_serialises():
    res = exp.scan_radial(schwarzschild(), 20.0, (3.0, 4.0), n_points=2, predict=False)
    d = res.as_dict()
    assert d["passed"] is True and len(d["points"]) == 2
    assert set(res.rows()[0]) == {"t", "deficit", "derivative", "derivative_error", "predicted_derivative"}
