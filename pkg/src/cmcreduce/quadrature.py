"""Quadrature on coordinate spheres and balls.

The sphere rule is a product rule: Gauss-Legendre in ``cos(theta)`` times the
periodic trapezoid rule in azimuth.  With ``N`` polar nodes and ``2N`` azimuth
nodes it integrates every polynomial (equivalently every spherical harmonic)
of degree ``<= 2N - 1`` exactly.  The same grid is used by
:mod:`cmcreduce.harmonics` for analysis and synthesis.

Besides the rules themselves this module carries the moment-identity suite for
sphere and ball integrals of monomials and contracted tensors, and an
alternative evaluator for ball integrals in origin-centred spherical
coordinates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class SphereRule:
    """Product Gauss-Legendre x trapezoid rule on the unit sphere.

    Attributes
    ----------
    n_polar : int
        Number of Gauss-Legendre nodes in ``cos(theta)``.
    nodes : ndarray, shape (K, 3)
        Unit vectors, ordered polar-major (``K = n_polar * n_azimuth``).
    weights : ndarray, shape (K,)
        Positive weights summing to ``4 pi``.
    theta, phi : ndarray, shape (K,)
        Colatitude and azimuth of each node.
    """

    n_polar: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)

    @classmethod
    def gauss_product(cls, n_polar: int) -> "SphereRule":
        if n_polar < 1:
            raise ValueError("n_polar must be positive")
        mu, wmu = np.polynomial.legendre.leggauss(n_polar)
        n_az = 2 * n_polar
        az = 2.0 * math.pi * np.arange(n_az) / n_az
        theta = np.repeat(np.arccos(mu), n_az)
        phi = np.tile(az, n_polar)
        weights = np.repeat(wmu, n_az) * (2.0 * math.pi / n_az)
        st = np.sin(theta)
        nodes = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
        for arr in (nodes, weights, theta, phi):
            arr.setflags(write=False)
        return cls(n_polar, nodes, weights, theta, phi)

    @classmethod
    def for_degree(cls, degree: int) -> "SphereRule":
        """Smallest product rule that is exact up to ``degree``."""
        return cls.gauss_product(max(1, (degree + 2) // 2))

    @property
    def n_azimuth(self) -> int:
        return 2 * self.n_polar

    @property
    def exactness_degree(self) -> int:
        return 2 * self.n_polar - 1

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class BallRule:
    """Radial Gauss-Legendre on ``[0, 1]`` (``rho^2`` folded in) times a sphere rule."""

    radial_nodes: np.ndarray = field(repr=False)
    radial_weights: np.ndarray = field(repr=False)
    sphere: SphereRule

    @classmethod
    def gauss_product(cls, n_radial: int, sphere: SphereRule) -> "BallRule":
        z, wz = np.polynomial.legendre.leggauss(n_radial)
        rho = 0.5 * (z + 1.0)
        return cls(rho, 0.5 * wz * rho**2, sphere)

    @classmethod
    def for_degree(cls, degree: int) -> "BallRule":
        # radial integrand rho^(degree + 2) needs 2n - 1 >= degree + 2
        n_radial = max(1, (degree + 4) // 2)
        return cls.gauss_product(n_radial, SphereRule.for_degree(degree))

    @property
    def exactness_degree(self) -> int:
        return min(self.sphere.exactness_degree, 2 * len(self.radial_nodes) - 3)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes in the unit ball, shape (R, K, 3), and matching weights (R, K)."""
        pts = self.radial_nodes[:, None, None] * self.sphere.nodes[None, :, :]
        w = self.radial_weights[:, None] * self.sphere.weights[None, :]
        return pts, w


def _as_center(a) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(3)


def integrate_sphere(f: Callable[[np.ndarray], np.ndarray], a, r: float,
                     rule: SphereRule) -> float:
    """Integrate ``f`` over the coordinate sphere ``S_r(a)``.

    ``f`` receives an array of points of shape (K, 3) and returns (K,) values.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    x = _as_center(a) + r * rule.nodes
    return float(r**2 * np.dot(rule.weights, f(x)))


def integrate_ball(f: Callable[[np.ndarray], np.ndarray], a, r: float,
                   rule: BallRule) -> float:
    """Integrate ``f`` over the coordinate ball ``B_r(a)``."""
    if r <= 0:
        raise ValueError("radius must be positive")
    pts, w = rule.points()
    x = _as_center(a) + r * pts
    vals = f(x.reshape(-1, 3)).reshape(w.shape)
    return float(r**3 * np.sum(w * vals))


def rotation_to(v) -> np.ndarray:
    """Rotation matrix ``Q`` with ``Q @ e3 = v / |v|``."""
    v = np.asarray(v, dtype=float)
    z = v / np.linalg.norm(v)
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = helper - np.dot(helper, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def integrate_ball_spherical(f: Callable[[np.ndarray], np.ndarray], xi, lam: float,
                             n_polar: int = 48, n_radial: int = 48,
                             n_azimuth: int = 64) -> float:
    """Integrate ``f`` over ``B_lam(lam xi)`` in origin-centred spherical coordinates.

    The integration axis is rotated onto ``xi``.  A ray from the origin at
    polar angle ``phi`` meets the ball for ``rho`` between
    ``lam |xi| (cos phi -+ sqrt(1/|xi|^2 - sin^2 phi))`` when ``phi <= phi_+``,
    ``sin^2 phi_+ = 1/|xi|^2``.  The polar integral is taken in the variable
    ``psi`` with ``sin phi = sin(phi_+) sin(psi)``, which removes the square-root
    endpoint behaviour at ``phi_+``.
    """
    xi = np.asarray(xi, dtype=float)
    t = float(np.linalg.norm(xi))
    if t <= 1.0:
        raise ValueError("|xi| must exceed 1 so the ball misses the origin")
    Q = rotation_to(xi)
    s_plus = 1.0 / t
    zp, wp = np.polynomial.legendre.leggauss(n_polar)
    psi = 0.25 * math.pi * (zp + 1.0)
    wpsi = 0.25 * math.pi * wp
    sin_phi = s_plus * np.sin(psi)
    cos_phi = np.sqrt(1.0 - sin_phi**2)
    # dphi = s_plus cos(psi) / cos(phi) dpsi
    dphi = s_plus * np.cos(psi) / cos_phi
    half = lam * t * (s_plus * np.cos(psi))  # lam|xi| sqrt(1/|xi|^2 - sin^2 phi)
    mid = lam * t * cos_phi
    zr, wr = np.polynomial.legendre.leggauss(n_radial)
    rho = mid[:, None] + half[:, None] * zr[None, :]
    wrho = half[:, None] * wr[None, :]
    az = 2.0 * math.pi * np.arange(n_azimuth) / n_azimuth
    waz = 2.0 * math.pi / n_azimuth
    # local coordinates, shape (P, Rr, A, 3)
    sp = sin_phi[:, None, None]
    cp = cos_phi[:, None, None]
    loc = np.stack(np.broadcast_arrays(
        rho[:, :, None] * sp * np.cos(az)[None, None, :],
        rho[:, :, None] * sp * np.sin(az)[None, None, :],
        rho[:, :, None] * cp), axis=-1)
    x = loc @ Q.T
    vals = f(x.reshape(-1, 3)).reshape(loc.shape[:-1])
    w = (wpsi * dphi * sin_phi)[:, None, None] * (wrho * rho**2)[:, :, None] * waz
    return float(np.sum(w * vals))


# ---------------------------------------------------------------------------
# moment identities


@dataclass
class IdentityCheck:
    name: str
    computed: float
    closed_form: float
    rel_error: float
    passed: bool


@dataclass
class IdentityReport:
    checks: list[IdentityCheck]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max(c.rel_error for c in self.checks)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def rows(self) -> list[dict]:
        return [dict(name=c.name, computed=c.computed, closed_form=c.closed_form,
                     rel_error=c.rel_error, passed=c.passed) for c in self.checks]


def _random_symmetric(rng, n_idx: int, groups: list[tuple[int, ...]]) -> np.ndarray:
    """Random tensor with ``n_idx`` indices, symmetric within each index group."""
    T = rng.standard_normal((3,) * n_idx)
    for grp in groups:
        perms = list(itertools.permutations(grp))
        acc = np.zeros_like(T)
        for p in perms:
            axes = list(range(n_idx))
            for src, dst in zip(grp, p):
                axes[src] = dst
            acc += np.transpose(T, axes)
        T = acc / len(perms)
    return T


def _poly(T: np.ndarray):
    """Return ``y -> T(y, ..., y)`` evaluated row-wise."""
    def f(y):
        out = np.einsum("ki,i...->k...", y, T)
        for _ in range(T.ndim - 1):
            out = np.einsum("ki,ki...->k...", y, out)
        return out
    return f


def verify_moment_identities(degree: int = 48, radii=(1.0, 2.5), center_norms=(3.0, 7.0),
                             seed: int = 0, tol: float = 1e-12) -> IdentityReport:
    """Check the standard ball and sphere moment identities by quadrature.

    All sphere identities are evaluated on ``S_r(a)`` with ``y = x - a`` and a
    seeded random centre ``a`` of each prescribed norm; the ``1/|a|`` shaped
    integrands use the same ``a``.  Tensors are random with the symmetries
    required by each identity.
    """
    if degree < 8:
        raise ValueError("identity suite needs exactness degree >= 8")
    rng = np.random.default_rng(seed)
    srule = SphereRule.for_degree(degree)
    brule = BallRule.for_degree(degree)
    pi = math.pi
    checks: list[IdentityCheck] = []

    def add(name, computed, closed, scale=None):
        denom = abs(closed) if scale is None else scale
        err = abs(computed - closed) / denom
        checks.append(IdentityCheck(name, float(computed), float(closed), float(err), err <= tol))

    for r in radii:
        for anorm in center_norms:
            d = rng.standard_normal(3)
            a = anorm * d / np.linalg.norm(d)
            tag = f"r={r:g},|a|={anorm:g}"
            A = _random_symmetric(rng, 2, [(0, 1)])
            B_full = _random_symmetric(rng, 4, [(0, 1, 2, 3)])
            B_pair = _random_symmetric(rng, 4, [(0, 1), (2, 3)])
            C = _random_symmetric(rng, 6, [(0, 1, 2, 3), (4, 5)])
            sig = _random_symmetric(rng, 2, [(0, 1)])
            b = rng.standard_normal(3)

            def ball(fy):
                return integrate_ball(lambda x: fy(x - a), a, r, brule)

            def sph(fy):
                return integrate_sphere(lambda x: fy(x - a), a, r, srule)

            # integrals over B_r
            for i in range(3):
                add(f"ball (y^{i+1})^2 [{tag}]", ball(lambda y: y[:, i]**2), 4*pi/15*r**5)
            add(f"ball |y|^2/3 [{tag}]", ball(lambda y: np.sum(y**2, 1) / 3), 4*pi/15*r**5)
            add(f"ball A(y,y) [{tag}]", ball(_poly(A)), 4*pi/15*r**5*np.trace(A))
            add(f"ball (y^1)^4 [{tag}]", ball(lambda y: y[:, 0]**4), 4*pi/35*r**7)
            add(f"ball (y^1 y^2)^2 [{tag}]", ball(lambda y: (y[:, 0]*y[:, 1])**2), 4*pi/105*r**7)
            add(f"ball B(y,y,y,y) sym [{tag}]", ball(_poly(B_full)),
                4*pi/35*r**7*np.einsum("iijj", B_full))
            # integrals over S_r
            for i in range(3):
                add(f"sphere (y^{i+1})^2 [{tag}]", sph(lambda y: y[:, i]**2), 4*pi/3*r**4)
            add(f"sphere A(y,y) [{tag}]", sph(_poly(A)), 4*pi/3*r**4*np.trace(A))
            add(f"sphere (y^2)^4 [{tag}]", sph(lambda y: y[:, 1]**4), 4*pi/5*r**6)
            add(f"sphere (y^1 y^3)^2 [{tag}]", sph(lambda y: (y[:, 0]*y[:, 2])**2), 4*pi/15*r**6)
            add(f"sphere B(y,y,y,y) sym [{tag}]", sph(_poly(B_full)),
                4*pi/5*r**6*np.einsum("iijj", B_full))
            add(f"sphere B(y,y,y,y) pair-sym [{tag}]", sph(_poly(B_pair)),
                4*pi/15*r**6*(np.einsum("iijj", B_pair) + 2*np.einsum("ijij", B_pair)))
            add(f"sphere (y^3)^6 [{tag}]", sph(lambda y: y[:, 2]**6), 4*pi/7*r**8)
            add(f"sphere (y^1)^4 (y^2)^2 [{tag}]", sph(lambda y: y[:, 0]**4*y[:, 1]**2), 4*pi/35*r**8)
            add(f"sphere (y^1 y^2 y^3)^2 [{tag}]", sph(lambda y: np.prod(y, 1)**2), 4*pi/105*r**8)
            add(f"sphere C(y^6) [{tag}]", sph(_poly(C)),
                4*pi/35*r**8*(np.einsum("iijjkk", C) + 4*np.einsum("iijkjk", C)))
            # odd moments vanish; scale by the matching even moment
            add(f"sphere <b,y>^3 (odd) [{tag}]", sph(lambda y: (y @ b)**3), 0.0,
                scale=4*pi*r**5*np.linalg.norm(b)**3)
            add(f"ball <b,y>^5 (odd) [{tag}]", ball(lambda y: (y @ b)**5), 0.0,
                scale=4*pi*r**8*np.linalg.norm(b)**5)
            # useful integrals
            a2 = anorm**2

            def shape(y):
                return (a2*np.sum(y**2, 1) - 3*(y @ a)**2) / anorm**5

            def sig_yy(y):
                return np.einsum("ki,ij,kj->k", y, sig, y)

            def sig_tf(y):
                return sig_yy(y) - np.sum(y**2, 1) * np.trace(sig) / 3
            sig_ring = sig - np.trace(sig) / 3 * np.eye(3)
            add(f"sphere shape^2 [{tag}]", sph(lambda y: shape(y)**2), 16*pi/5*r**6/anorm**6)
            closed = 8*pi/15*r**6/anorm**3*(np.trace(sig) - 3*(a @ sig @ a)/a2)
            add(f"sphere sigma_tf*shape [{tag}]", sph(lambda y: sig_tf(y)*shape(y)), closed)
            add(f"sphere sigma(y,y)*shape [{tag}]", sph(lambda y: sig_yy(y)*shape(y)), closed)
            add(f"sphere sigma_tf^2 [{tag}]", sph(lambda y: sig_tf(y)**2),
                8*pi/45*r**6*(3*np.sum(sig**2) - np.trace(sig)**2))
            add(f"sphere sigma_tf^2 ring [{tag}]", sph(lambda y: sig_tf(y)**2),
                8*pi/15*r**6*np.sum(sig_ring**2))
    return IdentityReport(checks, tol)
