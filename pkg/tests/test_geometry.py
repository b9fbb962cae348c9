import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmcreduce import geometry as geo
from cmcreduce.harmonics import HarmonicBasis, n_coefficients
from cmcreduce.metrics import flat, schwarzschild

L = 12


def sphere(center, r, L=L):
    return geo.GraphSurface.sphere(center, r, L)


def band_limited(basis, seed, scale, lmax=6):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n_coefficients(basis.L)) * scale
    c[basis.degrees > lmax] = 0.0
    return basis.from_coefficients(c)


def test_flat_round_sphere():
    s = sphere([1.0, -2.0, 0.5], 3.0)
    assert np.allclose(geo.mean_curvature(flat(), s), 2 / 3, atol=1e-13)
    assert geo.area(flat(), s) == pytest.approx(4 * math.pi * 9, rel=1e-14)
    assert geo.enclosed_volume(flat(), s) == pytest.approx(4 * math.pi * 9, rel=1e-14)


def test_flat_translation_leaves_H_constant_to_first_order():
    b = HarmonicBasis.build(L)
    v = b.analyze(b.rule.nodes[:, 0])
    devs = []
    for eps in (1e-2, 5e-3):
        s = sphere([0, 0, 0], 2.0).with_u(v * eps)
        devs.append(np.max(np.abs(geo.mean_curvature(flat(), s) - 1.0)))
    assert devs[0] < 1e-3
    assert devs[0] / devs[1] == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("r", [3.0, 10.0, 40.0])
def test_schwarzschild_centred_sphere(r):
    s = sphere([0, 0, 0], r)
    H = geo.mean_curvature(schwarzschild(), s)
    ref = (2 / r) * (1 + 1 / r) ** -3 * (1 - 1 / r)
    assert np.max(np.abs(H - ref)) <= 1e-10 * abs(ref)
    assert geo.area(schwarzschild(), s) == pytest.approx(4 * math.pi * r**2 * (1 + 1 / r) ** 4, rel=1e-14)


def _offcentre_residuals(r, an):
    spec = schwarzschild()
    a = np.array([0.0, 0.0, an])
    s = sphere(a, r)
    c = 1 + 1 / an
    A = geo.area(spec, s) / (4 * math.pi * r**2 * c**4) - (1 + 2 * c**-2 * r**2 / an**4 + 1.2 * r**4 / an**6)
    V = geo.enclosed_volume(spec, s) / (4 * math.pi / 3 * r**3 * c**6) \
        - (1 + 3 * c**-2 * r**2 / an**4 + 9 / 7 * r**4 / an**6)
    F = geo.brane_functional(spec, a, r, L=L) \
        - (4 * math.pi / 3 * r**2 * c**4 + 48 * math.pi / 35 * r**6 / an**6)
    return abs(A), abs(V), abs(F)


def test_offcentre_expansions_residual_scaling():
    r = 5.0
    prev = _offcentre_residuals(r, 40.0)
    for an in (80.0, 160.0):
        cur = _offcentre_residuals(r, an)
        for p, q in zip(prev, cur):
            assert q <= p / 64
        prev = cur


def test_brane_functional_flat():
    assert geo.brane_functional(flat(), [0, 0, 0], 2.0) == pytest.approx(4 * math.pi * 4 / 3, rel=1e-14)


def test_brane_functional_needs_geometry():
    with pytest.raises(ValueError):
        geo.brane_functional(flat(), [0, 0, 0])


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 20.0), st.floats(0.01, 1.0))
def test_volume_monotone_in_radius(r, dr):
    spec = schwarzschild()
    a = [0.0, 25.0, 30.0]
    assert geo.enclosed_volume(spec, sphere(a, r + dr)) > geo.enclosed_volume(spec, sphere(a, r))


def test_area_deficit_consistent_with_area():
    spec = schwarzschild()
    s = sphere([0.0, 0.0, 60.0], 10.0).with_e(0.3)
    c, _ = geo.area_deficit_parts(spec, s)
    total = geo.area(spec, s)
    assert geo.area_deficit(spec, s) == pytest.approx(total - 4 * math.pi * (c**2 * 10.0) ** 2, rel=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_first_variation_of_area(seed):
    spec = schwarzschild()
    base = sphere([0.0, 0.0, 30.0], 10.0)
    b = base.basis
    u0 = band_limited(b, 100 + seed, 1e-2)
    v = band_limited(b, seed, 1.0)
    s0 = base.with_u(u0)

    def A(eps):
        return geo.area(spec, s0.with_u(u0 + v * eps))

    h = 1e-3
    d1 = (A(h) - A(-h)) / (2 * h)
    d2 = (A(h / 2) - A(-h / 2)) / h
    fd = (4 * d2 - d1) / 3
    exact = geo.normal_speed_integral(spec, s0, v)
    assert fd == pytest.approx(exact, rel=1e-6)


def test_negative_height_rejected():
    s = sphere([0, 0, 0], 1.0)
    with pytest.raises(ValueError):
        geo.area(flat(), s.with_e(-2.0))
