"""Radial graphs over coordinate spheres: area, volume, mean curvature.

A :class:`GraphSurface` is ``X(n) = a + (r + u(n)) n`` over the unit sphere,
with ``u`` band-limited.  The radius is stored as ``r = r_ref + e`` so that a
solver can work with the small offset ``e`` directly.

Area and volume are large (``~ 4 pi r^2``) while the effects of interest are
many orders smaller, so both are assembled as *deficits* against the round
sphere.  Writing ``g = c^4 (delta + k)`` with ``c`` the conformal factor at the
centre, the relative perturbation ``k`` is computed without cancellation and

    area   = c^4 [4 pi r^2 + r^2 sum_w (sqrt(det(I + M)) - 1)]
    volume = c^6 [4 pi r_ref^3 / 3 + dV]

where ``M`` is the induced metric relative to ``r^2`` in an orthonormal frame
and ``dV`` collects the graph and metric corrections.  The deficits use
``expm1``/``log1p`` to stay accurate when ``M`` is tiny.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from cmcreduce.harmonics import HarmonicBasis, HarmonicField
from cmcreduce.metrics import MetricSpec

DEFAULT_L = 24
DEFAULT_RADIAL_NODES = 24


class DegenerateMetricError(ValueError):
    """Induced metric too ill-conditioned to trust."""


@dataclass(frozen=True)
class GraphSurface:
    """Graph ``a + (r_ref + e + u(n)) n`` over the unit sphere."""

    center: np.ndarray
    r_ref: float
    u: HarmonicField
    e: float = 0.0

    @classmethod
    def sphere(cls, center, r: float, L: int = DEFAULT_L) -> "GraphSurface":
        basis = HarmonicBasis.build(L)
        return cls(np.asarray(center, dtype=float).reshape(3), float(r), basis.zeros())

    @property
    def radius(self) -> float:
        return self.r_ref + self.e

    @property
    def basis(self) -> HarmonicBasis:
        return self.u.basis

    def with_u(self, u: HarmonicField) -> "GraphSurface":
        return replace(self, u=u)

    def with_e(self, e: float) -> "GraphSurface":
        return replace(self, e=float(e))

    def embedding(self) -> np.ndarray:
        rho = self.radius + self.u.values
        return self.center + rho[:, None] * self.basis.rule.nodes

    def check(self, spec: MetricSpec) -> None:
        rho = self.radius + self.u.values
        if np.any(rho <= 0):
            raise ValueError("graph height r + u must be positive")
        if spec.r_min > 0:
            spec.check_domain(self.embedding())


@dataclass
class SurfaceGeometry:
    """Per-node geometry in the frame ``T1 = X_theta``, ``T2 = X_phi / sin(theta)``.

    ``gamma`` is the induced metric, ``second_form`` the second fundamental form
    and ``H`` the mean curvature (``2/r`` on a flat round sphere).  ``area_element``
    multiplies the rule weights; ``normal_dot_radial`` is ``nu_k n^k``, the
    ``g``-normal component of a radial displacement.
    """

    gamma: np.ndarray = field(repr=False)
    second_form: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    area_element: np.ndarray = field(repr=False)
    normal_covector: np.ndarray = field(repr=False)
    normal_dot_radial: np.ndarray = field(repr=False)


def _frame(rule):
    th, ph = rule.theta, rule.phi
    ct, st, cp, sp = np.cos(th), np.sin(th), np.cos(ph), np.sin(ph)
    n = rule.nodes
    n_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_p = np.stack([-sp, cp, np.zeros_like(ph)], axis=-1)
    return n, n_t, e_p, st, ct


def surface_geometry(spec: MetricSpec, surf: GraphSurface) -> SurfaceGeometry:
    """Induced metric, normal, second fundamental form and mean curvature at the nodes."""
    surf.check(spec)
    rule = surf.basis.rule
    n, n_t, e_p, st, ct = _frame(rule)
    d = surf.u.derivatives()
    rho = surf.radius + d["u"]
    # frame vectors T1 = X_theta, T2 = X_phi / sin
    up_s = d["p"] / st
    T1 = d["t"][:, None] * n + rho[:, None] * n_t
    T2 = up_s[:, None] * n + rho[:, None] * e_p
    # coordinate second derivatives, scaled by 1/sin per phi index
    X_tt = (d["tt"] - rho)[:, None] * n + 2.0 * d["t"][:, None] * n_t
    # X_theta_phi / sin
    X_tp = (d["tp"] / st)[:, None] * n + d["t"][:, None] * e_p + up_s[:, None] * n_t \
        + (rho * ct / st)[:, None] * e_p
    # X_phi_phi / sin^2 ; n_phi = sin e_p, n_phi_phi = -sin (sin n + cos n_t)
    X_pp = (d["pp"] / st**2)[:, None] * n + (2.0 * up_s)[:, None] * e_p \
        - rho[:, None] * (n + (ct / st)[:, None] * n_t)
    X = surf.center + rho[:, None] * n
    g, Gam = spec.christoffel(X)
    T = np.stack([T1, T2], axis=1)  # (K, 2, 3)
    gamma = np.einsum("kai,kij,kbj->kab", T, g, T)
    N = np.cross(T1, T2)
    ginv = np.linalg.inv(g)
    Nn = np.sqrt(np.einsum("ki,kij,kj->k", N, ginv, N))
    nu = N / Nn[:, None]
    Xab = np.stack([np.stack([X_tt, X_tp], 1), np.stack([X_tp, X_pp], 1)], 1)  # (K,2,2,3)
    acc = Xab + np.einsum("kcij,kai,kbj->kabc", Gam, T, T)
    hmat = -np.einsum("kc,kabc->kab", nu, acc)
    det = gamma[:, 0, 0] * gamma[:, 1, 1] - gamma[:, 0, 1] ** 2
    tr = gamma[:, 0, 0] + gamma[:, 1, 1]
    cond = (tr + np.sqrt(np.maximum(tr**2 - 4 * det, 0))) / (tr - np.sqrt(np.maximum(tr**2 - 4 * det, 0)))
    if np.any(cond > 1e8):
        raise DegenerateMetricError(f"induced metric condition number {cond.max():.3e}")
    ginv2 = np.stack([np.stack([gamma[:, 1, 1], -gamma[:, 0, 1]], -1),
                      np.stack([-gamma[:, 0, 1], gamma[:, 0, 0]], -1)], 1) / det[:, None, None]
    H = np.einsum("kab,kab->k", ginv2, hmat)
    return SurfaceGeometry(gamma, hmat, H, np.sqrt(det), nu, np.einsum("ki,ki->k", nu, n))


def mean_curvature(spec: MetricSpec, surf: GraphSurface) -> np.ndarray:
    return surface_geometry(spec, surf).H


# ---------------------------------------------------------------------------
# deficits


def _relative_metric(spec: MetricSpec, center, y) -> tuple[float, np.ndarray]:
    """``c`` and ``k`` with ``g(center + y) = c^4 (delta + k)``."""
    c, f = spec.relative_conformal(center, y)
    k = (f * (4.0 + f * (6.0 + f * (4.0 + f))))[:, None, None] * np.eye(3)
    if spec.sigma is not None:
        k = k + spec.sigma.eval(np.asarray(center) + y, 0) / c**4
    return c, k


def _sqrt1p_m1(q):
    return np.expm1(0.5 * np.log1p(q))


def area_deficit_parts(spec: MetricSpec, surf: GraphSurface) -> tuple[float, float]:
    """``c`` and ``dA`` with ``area = c^4 (4 pi r^2 + dA)``."""
    surf.check(spec)
    rule = surf.basis.rule
    n, n_t, e_p, st, _ = _frame(rule)
    d = surf.u.derivatives()
    u = d["u"]
    r = surf.radius
    rho = r + u
    du = np.stack([d["t"], d["p"] / st], axis=1)
    T1 = d["t"][:, None] * n + rho[:, None] * n_t
    T2 = du[:, 1:2] * n + rho[:, None] * e_p
    T = np.stack([T1, T2], axis=1)
    c, k = _relative_metric(spec, surf.center, rho[:, None] * n)
    # E - r^2 I = u (2r + u) I + du du^T, exactly
    Mr2 = (u * (2.0 * r + u))[:, None, None] * np.eye(2) + du[:, :, None] * du[:, None, :] \
        + np.einsum("kai,kij,kbj->kab", T, k, T)
    M = Mr2 / r**2
    q = M[:, 0, 0] + M[:, 1, 1] + M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    dA = r**2 * float(np.dot(rule.weights, _sqrt1p_m1(q)))
    return c, dA


def area(spec: MetricSpec, surf: GraphSurface) -> float:
    c, dA = area_deficit_parts(spec, surf)
    r = surf.radius
    return c**4 * (4.0 * math.pi * r**2 + dA)


def area_deficit(spec: MetricSpec, surf: GraphSurface) -> float:
    """``area - 4 pi (c^2 r_ref)^2`` evaluated without cancellation."""
    c, dA = area_deficit_parts(spec, surf)
    e, r0 = surf.e, surf.r_ref
    return c**4 * (4.0 * math.pi * e * (2.0 * r0 + e) + dA)


def volume_deficit_parts(spec: MetricSpec, surf: GraphSurface,
                         n_radial: int = DEFAULT_RADIAL_NODES) -> tuple[float, float]:
    """``c`` and ``dV`` with ``volume = c^6 (4 pi r_ref^3 / 3 + dV)``."""
    surf.check(spec)
    rule = surf.basis.rule
    n = rule.nodes
    v = surf.e + surf.u.values
    r0 = surf.r_ref
    rho = r0 + v
    graph = float(np.dot(rule.weights, v * (3.0 * r0**2 + 3.0 * r0 * v + v**2) / 3.0))
    z, wz = np.polynomial.legendre.leggauss(n_radial)
    s = 0.5 * (z + 1.0)
    ws = 0.5 * wz
    t = rho[:, None] * s[None, :]  # (K, R)
    y = (t[:, :, None] * n[:, None, :]).reshape(-1, 3)
    if spec.r_min > 0:
        spec.check_domain(surf.center + y)
    c, k = _relative_metric(spec, surf.center, y)
    trk = np.einsum("kii->k", k)
    tr2 = np.einsum("kij,kji->k", k, k)
    q = trk + 0.5 * (trk**2 - tr2) + np.linalg.det(k)
    integrand = _sqrt1p_m1(q).reshape(t.shape) * t**2
    radial = np.sum(ws[None, :] * integrand, axis=1) * rho
    metric_part = float(np.dot(rule.weights, radial))
    return c, graph + metric_part


def enclosed_volume(spec: MetricSpec, surf: GraphSurface,
                    n_radial: int = DEFAULT_RADIAL_NODES) -> float:
    """``g``-volume of the region bounded by the graph (radial-shell quadrature)."""
    c, dV = volume_deficit_parts(spec, surf, n_radial)
    return c**6 * (4.0 * math.pi * surf.r_ref**3 / 3.0 + dV)


def brane_functional(spec: MetricSpec, a, r: Optional[float] = None,
                     surf: Optional[GraphSurface] = None, L: int = DEFAULT_L) -> float:
    """``area - 2 r^-1 Phi(|a|)^-2 vol`` for the sphere ``S_r(a)`` or a graph over it.

    ``Phi(|a|) = 1 + m/2|a|`` (plus ``phi`` for radial profiles), which is
    ``1 + 1/|a|`` for unit-normalised mass ``m = 2``.
    """
    if surf is None:
        if r is None:
            raise ValueError("need r or a surface")
        surf = GraphSurface.sphere(a, r, L)
    a = np.asarray(surf.center, dtype=float)
    an = float(np.linalg.norm(a))
    c = float(spec.conformal_factor(an)) if an >= max(spec.r_min, 1e-300) else 1.0
    rr = surf.radius
    return area(spec, surf) - 2.0 / rr / c**2 * enclosed_volume(spec, surf)


def normal_speed_integral(spec: MetricSpec, surf: GraphSurface, v: HarmonicField) -> float:
    """``int H_g g(v n, nu) dmu_g`` for a radial variation ``v``."""
    geo = surface_geometry(spec, surf)
    w = surf.basis.rule.weights
    return float(np.sum(w * geo.area_element * geo.H * v.values * geo.normal_dot_radial))
