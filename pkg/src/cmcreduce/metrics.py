"""Background metrics in a chart at infinity.

Two kinds of metric are supported, both with a Schwarzschild conformal part of
mass ``m``:

* ``GeneralSigma``: ``g = (1 + m/2|x|)^4 delta + sigma`` for a symmetric
  perturbation ``sigma`` given by a :class:`SigmaField`.
* ``RadialConformal``: ``g = (1 + m/2r + phi(r))^4 delta`` where ``phi`` solves
  ``(r^2 phi')' = r^2 S`` and decays, for a radial profile ``S``.

Exact Schwarzschild (and flat space, ``m = 0``) is the radial kind with
``S = 0``.

All evaluators are vectorised over points of shape ``(K, 3)``.  Derivatives of
the conformal part are analytic; derivatives of ``sigma`` come from its
callbacks when supplied and from Richardson-extrapolated central differences
otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from cmcreduce._fd import richardson

Interval = tuple[float, float]


class ChartDomainError(ValueError):
    """A point lies inside the inner radius of the chart."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance."""


# ---------------------------------------------------------------------------
# bumps


def chi_bump(a: float, b: float) -> Callable[[np.ndarray], np.ndarray]:
    """Standard bump ``exp(-1/((t-a)(b-t)))`` on ``(a, b)``, zero elsewhere."""
    if not a < b:
        raise ValueError("need a < b")

    def chi(t):
        t = np.asarray(t, dtype=float)
        q = (t - a) * (b - t)
        inside = q > 0
        out = np.zeros_like(t)
        out[inside] = np.exp(-1.0 / q[inside])
        return out if out.ndim else float(out)

    chi.support = (float(a), float(b))
    return chi


def chi_bump_slope(a: float = 4.0, b: float = 6.0) -> Callable[[np.ndarray], np.ndarray]:
    """Bump on ``(a, b)`` tilted by ``(7 - t)`` and scaled so ``chi'(5) = -1``.

    With the default endpoints ``chi(5) = 2``.
    """
    chi0 = chi_bump(a, b)
    mid = 0.5 * (a + b)
    c0 = float(chi0(mid))
    # slope at the midpoint of the tilted bump, chi0'(mid) = 0 by symmetry
    scale = 1.0 / c0

    def chi(t):
        t = np.asarray(t, dtype=float)
        out = chi0(t) * (mid + 2.0 - t) * scale
        return out if np.ndim(out) else float(out)

    chi.support = (float(a), float(b))
    return chi


# ---------------------------------------------------------------------------
# radial profiles


def phi_from_S(S: Callable[[float], float], support: Sequence[Interval], r: float,
               epsabs: float = 0.0, epsrel: float = 1e-12, limit: int = 200) -> tuple[float, float]:
    """Decaying solution of ``(r^2 phi')' = r^2 S`` and its derivative at ``r``.

    ``phi(r) = (1/r) int_r^inf (rho - r) rho S``, ``phi'(r) = -(1/r^2) int_r^inf rho^2 S``,
    evaluated with adaptive quadrature restricted to ``support`` intersected
    with ``[r, inf)``.

    Raises
    ------
    QuadratureError
        If any piece fails to converge within ``limit`` subdivisions.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    i1 = i2 = 0.0
    for lo, hi in support:
        lo = max(lo, r)
        if hi <= lo:
            continue
        for power in (1, 2):
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    val, _ = integrate.quad(lambda s: s**power * S(s), lo, hi,
                                            epsabs=epsabs, epsrel=epsrel, limit=limit)
                except integrate.IntegrationWarning as exc:
                    raise QuadratureError(f"phi quadrature on [{lo}, {hi}]: {exc}") from exc
            if power == 1:
                i1 += val
            else:
                i2 += val
    return i2 / r - i1, -i2 / r**2


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)
# pulse integrals: breakpoint table plus a short local Gauss rule
_N_BREAKS = 512
_LOCAL_NODES, _LOCAL_WEIGHTS = np.polynomial.legendre.leggauss(12)


@dataclass(frozen=True)
class RadialProfile:
    """Radial scalar profile ``S`` with the derived conformal correction ``phi``.

    Attributes
    ----------
    S : callable
        Vectorised profile, ``S <= 0``.
    support : tuple of (a, b)
        Disjoint intervals (``b`` may be ``inf``) outside which ``S = 0``.
    decay_order : int
        ``|S| = O(r^-p)``.
    params : dict
        Construction parameters, kept for serialisation.
    tail_bound : float
        Bound on ``sup |phi|`` contributed by omitted pulses on the probed range.
    """

    S: Callable[[np.ndarray], np.ndarray]
    support: tuple[Interval, ...]
    decay_order: int
    params: dict = field(default_factory=dict)
    tail_bound: float = 0.0
    _moments: tuple = field(default=(), repr=False)

    @classmethod
    def build(cls, S, support, decay_order: int, params=None, tail_bound: float = 0.0) -> "RadialProfile":
        support = tuple((float(a), float(b)) for a, b in sorted(support))
        for (a0, b0), (a1, _) in zip(support, support[1:]):
            if a1 < b0:
                raise ValueError("support intervals overlap")
        moments = []
        for a, b in support:
            if math.isinf(b):
                moments.append(None)
                continue
            # cumulative integrals int_{x_i}^b rho^j S at breakpoints x_i
            x = np.linspace(a, b, _N_BREAKS + 1)
            z = 0.5 * (x[1:] - x[:-1])[:, None] * (_fine_nodes[None, :] + 1.0) + x[:-1, None]
            w = 0.5 * (x[1:] - x[:-1])[:, None] * _fine_weights[None, :]
            sv = S(z.ravel()).reshape(z.shape)
            seg1 = np.sum(w * z * sv, axis=1)
            seg2 = np.sum(w * z**2 * sv, axis=1)
            c1 = np.concatenate([np.cumsum(seg1[::-1])[::-1], [0.0]])
            c2 = np.concatenate([np.cumsum(seg2[::-1])[::-1], [0.0]])
            moments.append((x, c1, c2))
        return cls(S, support, decay_order, dict(params or {}), tail_bound, tuple(moments))

    def _integrals(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``int_r^inf rho S`` and ``int_r^inf rho^2 S`` for an array of radii."""
        i1 = np.zeros_like(r)
        i2 = np.zeros_like(r)
        for (a, b), mom in zip(self.support, self._moments):
            if mom is not None:
                x, c1, c2 = mom
                below = r <= a
                i1[below] += c1[0]
                i2[below] += c2[0]
                part = (r > a) & (r < b)
                if np.any(part):
                    rp = r[part]
                    idx = np.minimum(np.searchsorted(x, rp, side="right"), len(x) - 1)
                    top = x[idx]
                    half = 0.5 * (top - rp)
                    z = half[:, None] * (_LOCAL_NODES[None, :] + 1.0) + rp[:, None]
                    w = half[:, None] * _LOCAL_WEIGHTS[None, :]
                    s = self.S(z.ravel()).reshape(z.shape)
                    i1[part] += c1[idx] + np.sum(w * z * s, axis=1)
                    i2[part] += c2[idx] + np.sum(w * z**2 * s, axis=1)
            else:
                lo = np.maximum(r, a)
                # rho = lo / s maps (0, 1] onto [lo, inf)
                s_nodes = 0.5 * (_GL_NODES + 1.0)
                s_w = 0.5 * _GL_WEIGHTS
                z = lo[:, None] / s_nodes[None, :]
                jac = lo[:, None] / s_nodes[None, :] ** 2
                sv = self.S(z.ravel()).reshape(z.shape)
                i1 += np.sum(s_w * jac * z * sv, axis=1)
                i2 += np.sum(s_w * jac * z**2 * sv, axis=1)
        return i1, i2

    def phi(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        i1, i2 = self._integrals(r)
        return i2 / r - i1

    def phi_prime(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        _, i2 = self._integrals(r)
        return -i2 / r**2

    def phi_all(self, r) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(phi, phi', phi'', S)`` at the radii ``r``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        i1, i2 = self._integrals(r)
        s = self.S(r)
        ph = i2 / r - i1
        dph = -i2 / r**2
        return ph, dph, s - 2.0 * dph / r, s


_fine_nodes, _fine_weights = np.polynomial.legendre.leggauss(24)


def power_tail_profile(p: float = 5.0, r0: float = 1.0) -> RadialProfile:
    """``S(rho) = -rho^-p`` for ``rho >= r0``."""

    def S(rho):
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        on = rho >= r0
        out[on] = -rho[on] ** (-p)
        return out

    return RadialProfile.build(S, [(r0, math.inf)], int(p), {"profile": "power_tail", "p": p, "r0": r0})


def _pulse_profile(chi, scale_power: int, amplitude: float, k_max: int, name: str) -> RadialProfile:
    a, b = chi.support
    if b >= 10.0 * a:
        raise ValueError("pulse spacing needs b < 10 a")
    ks = np.arange(k_max + 1)

    def S(rho):
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        pos = rho > a
        # pulses are disjoint (b < 10 a), so each radius meets at most the pulse floor(log10(rho/a))
        k = np.zeros(rho.shape, dtype=int)
        k[pos] = np.floor(np.log10(rho[pos] / a)).astype(int)
        scale = 10.0 ** k
        on = pos & (k <= k_max) & (rho < b * scale)
        out[on] = -amplitude * 10.0 ** (-scale_power * k[on]) * chi(rho[on] / scale[on])
        return out

    support = [(a * 10.0**k, b * 10.0**k) for k in ks]
    # an omitted pulse k changes phi below it by at most A 10^{(3-p)k} int t^2 chi / r;
    # summed over k > k_max and evaluated at r = a 10^{k_max}
    t = np.linspace(a, b, 2001)
    m2 = float(np.trapezoid(t**2 * chi(t), t))
    ratio = 10.0 ** (3 - scale_power)
    tail = amplitude * m2 * ratio ** (k_max + 1) / (1.0 - ratio) / (a * 10.0**k_max)
    params = {"profile": name, "A": amplitude, "k_max": k_max}
    return RadialProfile.build(S, support, scale_power, params, tail_bound=tail)


def pulse_S_thm13(A: float, k_max: int = 24) -> RadialProfile:
    """Pulses ``S = -A sum_k 10^{-4k} chi(10^{-k} r)`` with ``chi`` the bump on ``(3, 4)``."""
    if A <= 0:
        raise ValueError("A must be positive")
    return _pulse_profile(chi_bump(3.0, 4.0), 4, A, k_max, "thm13")


def pulse_S_thm17(k_max: int = 24) -> RadialProfile:
    """Pulses ``S = -sum_k 10^{-5k} chi(10^{-k} r)`` with the tilted bump on ``(4, 6)``."""
    return _pulse_profile(chi_bump_slope(4.0, 6.0), 5, 1.0, k_max, "thm17")


# ---------------------------------------------------------------------------
# sigma fields


@dataclass(frozen=True)
class SigmaField:
    """Symmetric 2-tensor perturbation ``sigma_ij(x)``.

    Parameters
    ----------
    value : callable
        ``value(x)`` for ``x`` of shape (K, 3) returns (K, 3, 3).
    grad, hess : callable, optional
        ``grad(x)[k, l, i, j] = d_l sigma_ij``; ``hess(x)[k, l, m, i, j] = d_l d_m sigma_ij``.
        Central differences are used when absent.
    decay_constants : dict
        ``{order: C}`` with ``|d^I sigma| <= C |x|^(-2-|I|)``.
    support_radius_inner : float
        ``sigma`` vanishes for ``|x|`` below this radius.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    decay_constants: dict = field(default_factory=dict)
    support_radius_inner: float = 0.0

    def eval(self, x, order: int = 0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if order == 0:
            return self.value(x)
        if order == 1:
            return self.grad(x) if self.grad is not None else self.fd_grad(x)
        if order == 2:
            return self.hess(x) if self.hess is not None else self.fd_hess(x)
        raise ValueError("derivative order must be 0, 1 or 2")

    def _steps(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(1e-4 * np.linalg.norm(x, axis=1), 1e-5)

    def fd_grad(self, x: np.ndarray) -> np.ndarray:
        h = self._steps(x)
        out = np.empty(x.shape[:1] + (3, 3, 3))
        for l in range(3):
            e = np.zeros(3); e[l] = 1.0

            def d(hh):
                return (self.value(x + hh[:, None] * e) - self.value(x - hh[:, None] * e)) \
                    / (2.0 * hh[:, None, None])
            out[:, l] = (4.0 * d(0.5 * h) - d(h)) / 3.0
        return out

    def fd_hess(self, x: np.ndarray) -> np.ndarray:
        h = self._steps(x)
        v0 = self.value(x)
        out = np.empty(x.shape[:1] + (3, 3, 3, 3))
        eye = np.eye(3)
        for l in range(3):
            for m in range(l, 3):
                def d(hh):
                    hh3 = hh[:, None, None]
                    if l == m:
                        e = hh[:, None] * eye[l]
                        return (self.value(x + e) - 2.0 * v0 + self.value(x - e)) / hh3**2
                    el, em = hh[:, None] * eye[l], hh[:, None] * eye[m]
                    return (self.value(x + el + em) - self.value(x + el - em)
                            - self.value(x - el + em) + self.value(x - el - em)) / (4.0 * hh3**2)
                val = (4.0 * d(0.5 * h) - d(h)) / 3.0
                out[:, l, m] = val
                out[:, m, l] = val
        return out


# ---------------------------------------------------------------------------
# metric specs


@dataclass(frozen=True)
class MetricSpec:
    """Chart metric ``(1 + m/2r + phi)^4 delta + sigma``.

    At most one of ``sigma`` and ``profile`` is set.  ``name`` records a
    builtin label for reports.
    """

    mass: float = 2.0
    sigma: Optional[SigmaField] = None
    profile: Optional[RadialProfile] = None
    r_min: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if self.sigma is not None and self.profile is not None:
            raise ValueError("a metric is either GeneralSigma or RadialConformal, not both")
        if self.mass < 0:
            raise ValueError("mass must be non-negative")

    @property
    def kind(self) -> str:
        return "GeneralSigma" if self.sigma is not None else "RadialConformal"

    @property
    def is_radial(self) -> bool:
        return self.sigma is None

    @property
    def is_flat(self) -> bool:
        return self.mass == 0 and self.sigma is None and self.profile is None

    def check_domain(self, x: np.ndarray) -> np.ndarray:
        rr = np.linalg.norm(x, axis=-1)
        if np.any(rr < self.r_min):
            raise ChartDomainError(f"point with |x| = {rr.min():.4g} below chart radius {self.r_min}")
        return rr

    # conformal part -------------------------------------------------------

    def conformal(self, rr) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``Phi = 1 + m/2r + phi`` and its first two radial derivatives."""
        rr = np.asarray(rr, dtype=float)
        m = self.mass
        if m == 0.0:
            Phi, dPhi, d2Phi = np.ones_like(rr), np.zeros_like(rr), np.zeros_like(rr)
        else:
            Phi = 1.0 + 0.5 * m / rr
            dPhi = -0.5 * m / rr**2
            d2Phi = m / rr**3
        if self.profile is not None:
            ph, dph, d2ph, _ = self.profile.phi_all(rr.ravel())
            Phi = Phi + ph.reshape(rr.shape)
            dPhi = dPhi + dph.reshape(rr.shape)
            d2Phi = d2Phi + d2ph.reshape(rr.shape)
        return Phi, dPhi, d2Phi

    def conformal_factor(self, rr) -> np.ndarray:
        return self.conformal(rr)[0]

    def phi(self, rr) -> np.ndarray:
        rr = np.asarray(rr, dtype=float)
        if self.profile is None:
            return np.zeros_like(rr)
        return self.profile.phi(rr.ravel()).reshape(rr.shape)

    def S(self, rr) -> np.ndarray:
        rr = np.asarray(rr, dtype=float)
        if self.profile is None:
            return np.zeros_like(rr)
        return self.profile.S(rr.ravel()).reshape(rr.shape)

    def relative_conformal(self, center, y) -> tuple[float, np.ndarray]:
        """``c = Phi(|a|)`` and ``f = Phi(|a + y|)/c - 1`` without cancellation."""
        a = np.asarray(center, dtype=float)
        y = np.atleast_2d(y)
        an = float(np.linalg.norm(a))
        x = a + y
        xn = np.linalg.norm(x, axis=1)
        if an == 0.0 or an < self.r_min:
            return 1.0, self.conformal_factor(xn) - 1.0
        c = float(self.conformal_factor(an))
        # |a| - |x| = -(2 a.y + |y|^2) / (|a| + |x|)
        diff_norm = -(2.0 * (y @ a) + np.sum(y**2, axis=1)) / (an + xn)
        dPhi = 0.5 * self.mass * diff_norm / (xn * an)
        if self.profile is not None:
            dPhi = dPhi + self.phi(xn) - float(self.phi(an))
        return c, dPhi / c

    # metric and derivatives ------------------------------------------------

    def metric(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rr = self.check_domain(x)
        Phi = self.conformal_factor(rr)
        g = (Phi**4)[:, None, None] * np.eye(3)
        if self.sigma is not None:
            g = g + self.sigma.eval(x, 0)
        return g

    def metric_derivatives(self, x, order: int = 1):
        """``g``, ``dg[k, l, i, j] = d_l g_ij`` and, for ``order = 2``, ``d2g[k, l, m, i, j]``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rr = self.check_domain(x)
        Phi, dPhi, d2Phi = self.conformal(rr)
        xh = x / rr[:, None]
        eye = np.eye(3)
        P4 = Phi**4
        dP4 = (4.0 * Phi**3 * dPhi)[:, None] * xh
        g = P4[:, None, None] * eye
        dg = dP4[:, :, None, None] * eye
        if self.sigma is not None:
            g = g + self.sigma.eval(x, 0)
            dg = dg + self.sigma.eval(x, 1)
        if order == 1:
            return g, dg
        xx = xh[:, :, None] * xh[:, None, :]
        d2P4 = (4.0 * Phi**3 * d2Phi + 12.0 * Phi**2 * dPhi**2)[:, None, None] * xx \
            + (4.0 * Phi**3 * dPhi / rr)[:, None, None] * (eye - xx)
        d2g = d2P4[:, :, :, None, None] * eye
        if self.sigma is not None:
            d2g = d2g + self.sigma.eval(x, 2)
        return g, dg, d2g

    def christoffel(self, x) -> tuple[np.ndarray, np.ndarray]:
        """``g`` and ``Gamma[k, c, i, j] = Gamma^c_ij``."""
        g, dg = self.metric_derivatives(x, 1)
        return g, christoffel_from(g, dg)


def christoffel_from(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    # Gamma_{l i j} = (d_i g_lj + d_j g_li - d_l g_ij) / 2
    low = 0.5 * (np.einsum("kilj->klij", dg) + np.einsum("kjli->klij", dg) - dg)
    ginv = np.linalg.inv(g)
    return np.einsum("kcl,klij->kcij", ginv, low)


def curvature_from(g: np.ndarray, dg: np.ndarray, d2g: np.ndarray) -> np.ndarray:
    """Scalar curvature from a metric and its first two partial derivatives."""
    ginv = np.linalg.inv(g)
    low = 0.5 * (np.einsum("kilj->klij", dg) + np.einsum("kjli->klij", dg) - dg)
    Gam = np.einsum("kcl,klij->kcij", ginv, low)
    # d_m Gamma_{l i j}
    dlow = 0.5 * (np.einsum("kmilj->kmlij", d2g) + np.einsum("kmjli->kmlij", d2g)
                  - d2g)
    dginv = -np.einsum("kca,kmab,kbl->kmcl", ginv, dg, ginv)
    dGam = np.einsum("kmcl,klij->kmcij", dginv, low) + np.einsum("kcl,kmlij->kmcij", ginv, dlow)
    # R_ij = d_c Gamma^c_ij - d_j Gamma^c_ic + Gamma^c_cl Gamma^l_ij - Gamma^c_jl Gamma^l_ic
    ric = (np.einsum("kccij->kij", dGam) - np.einsum("kjcic->kij", dGam)
           + np.einsum("kccl,klij->kij", Gam, Gam) - np.einsum("kcjl,klic->kij", Gam, Gam))
    return np.einsum("kij,kij->k", ginv, ric)


# ---------------------------------------------------------------------------
# builtin metrics


def schwarzschild(mass: float = 2.0) -> MetricSpec:
    return MetricSpec(mass=mass, name="schwarzschild")


def flat() -> MetricSpec:
    return MetricSpec(mass=0.0, r_min=0.0, name="flat")


def radial_conformal(profile: RadialProfile, mass: float = 2.0, r_min: float = 1.0,
                     name: str = "radial") -> MetricSpec:
    return MetricSpec(mass=mass, profile=profile, r_min=r_min, name=name)


def thm13_metric(A: float, k_max: int = 24) -> MetricSpec:
    return radial_conformal(pulse_S_thm13(A, k_max), name="thm13")


def thm17_metric(k_max: int = 24) -> MetricSpec:
    return radial_conformal(pulse_S_thm17(k_max), name="thm17")


def radial_as_sigma(spec: MetricSpec) -> MetricSpec:
    """Re-express a radial metric as Schwarzschild plus ``sigma = (Phi^4 - Phi_m^4) delta``.

    Derivatives of ``sigma`` are then taken by finite differences, giving an
    evaluation path independent of the closed radial formulas.
    """
    if spec.profile is None:
        raise ValueError("spec has no radial profile")
    m = spec.mass
    prof = spec.profile

    def value(x):
        rr = np.linalg.norm(x, axis=1)
        base = 1.0 + 0.5 * m / rr
        ph = prof.phi(rr)
        full = base + ph
        # full^4 - base^4 = ph (full + base)(full^2 + base^2)
        d = ph * (full + base) * (full**2 + base**2)
        return d[:, None, None] * np.eye(3)

    return MetricSpec(mass=m, sigma=SigmaField(value), r_min=spec.r_min, name=spec.name + "-as-sigma")


# ---------------------------------------------------------------------------
# public operations


def metric_at(spec: MetricSpec, x) -> np.ndarray:
    """Metric components at one point (3, 3) or a batch (K, 3, 3)."""
    x = np.asarray(x, dtype=float)
    g = spec.metric(x)
    return g[0] if x.ndim == 1 else g


def scalar_curvature(spec: MetricSpec, x, method: str = "auto") -> np.ndarray:
    """Scalar curvature of ``spec``.

    ``method='closed'`` uses ``-8 Phi^-5 S`` (radial metrics only);
    ``method='christoffel'`` assembles the full Riemannian curvature from the
    metric and its derivatives.  ``'auto'`` picks the closed form when
    available.
    """
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    if method == "auto":
        method = "closed" if spec.is_radial else "christoffel"
    if method == "closed":
        if not spec.is_radial:
            raise ValueError("closed-form curvature needs a radial metric")
        rr = spec.check_domain(pts)
        R = radial_curvature(spec, rr)
    elif method == "christoffel":
        h = np.maximum(1e-4 * np.linalg.norm(pts, axis=1), 1e-5)
        spec.check_domain(pts)
        if spec.sigma is not None and spec.sigma.hess is None and \
                np.any(np.linalg.norm(pts, axis=1) - 2 * h < spec.r_min):
            raise ChartDomainError("finite-difference stencil leaves the chart")
        R = curvature_from(*spec.metric_derivatives(pts, 2))
    else:
        raise ValueError(f"unknown method {method!r}")
    return R[0] if x.ndim == 1 else R


def radial_curvature(spec: MetricSpec, rr) -> np.ndarray:
    """``R(r) = -8 Phi(r)^-5 S(r)`` for radial metrics."""
    rr = np.asarray(rr, dtype=float)
    if spec.profile is None:
        return np.zeros_like(rr)
    Phi = spec.conformal_factor(rr)
    return -8.0 * spec.S(rr) / Phi**5


def _radial_step(r: float) -> float:
    return 1e-3 * r


def radial_curvature_derivatives(spec: MetricSpec, r: float, h: Optional[float] = None) -> dict:
    """``R`` and ``dR/dr`` up to third order for a radial metric, by 1-D differences."""
    h = _radial_step(r) if h is None else h

    def f(s):
        return float(radial_curvature(spec, np.array([s]))[0])
    out = {"R": f(r)}
    for k in (1, 2, 3):
        out[f"d{k}"] = float(richardson(f, r, h, k))
    r1, r2, r3 = out["d1"], out["d2"], out["d3"]
    out["lap"] = r2 + 2.0 * r1 / r
    out["d_lap"] = r3 + 2.0 * r2 / r - 2.0 * r1 / r**2
    return out


def laplacian_scalar_curvature(spec: MetricSpec, x, method: str = "auto",
                               outer_step: Optional[float] = None) -> float:
    """Euclidean Laplacian of the scalar curvature at ``x``.

    ``method='radial'`` uses ``R'' + 2R'/r`` on the closed form; ``'stencil'``
    applies a 3-D seven-point Laplacian (Richardson over two steps) to
    :func:`scalar_curvature`.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    r = float(np.linalg.norm(x))
    if method == "auto":
        method = "radial" if spec.is_radial else "stencil"
    if method == "radial":
        if not spec.is_radial:
            raise ValueError("radial Laplacian needs a radial metric")
        return radial_curvature_derivatives(spec, r)["lap"]
    if method != "stencil":
        raise ValueError(f"unknown method {method!r}")
    H = 2e-2 * r if outer_step is None else outer_step
    return laplacian_of(lambda p: scalar_curvature(spec, p), x, H)


def laplacian_of(F: Callable[[np.ndarray], np.ndarray], x, H: float) -> float:
    """Seven-point Laplacian of a batched scalar function, Richardson over ``H``, ``H/2``."""
    x = np.asarray(x, dtype=float).reshape(3)

    def lap(h):
        pts = [x]
        for i in range(3):
            e = np.zeros(3); e[i] = h
            pts += [x + e, x - e]
        v = np.asarray(F(np.array(pts)), dtype=float)
        return (np.sum(v[1:]) - 6.0 * v[0]) / h**2

    return float((4.0 * lap(0.5 * H) - lap(H)) / 3.0)


def gradient_of(F: Callable[[np.ndarray], np.ndarray], x, H: float) -> np.ndarray:
    """Central-difference gradient of a batched scalar function with Richardson."""
    x = np.asarray(x, dtype=float).reshape(3)

    def grad(h):
        pts = []
        for i in range(3):
            e = np.zeros(3); e[i] = h
            pts += [x + e, x - e]
        v = np.asarray(F(np.array(pts)), dtype=float)
        return (v[0::2] - v[1::2]) / (2.0 * h)

    return (4.0 * grad(0.5 * H) - grad(H)) / 3.0


# ---------------------------------------------------------------------------
# explicit sigma fields


def _bump_parts(x, p, w):
    """``B = exp(-1/(1 - s))`` with ``s = |x - p|^2 / w^2`` and ``dB/ds``, ``d2B/ds2``."""
    y = x - p
    s = np.sum(y**2, axis=1) / w**2
    inside = s < 1.0
    B = np.zeros_like(s)
    B1 = np.zeros_like(s)
    B2 = np.zeros_like(s)
    q = 1.0 - s[inside]
    Bi = np.exp(-1.0 / q)
    B[inside] = Bi
    B1[inside] = -Bi / q**2
    B2[inside] = Bi * (1.0 / q**4 - 2.0 / q**3)
    return y, B, B1, B2


def bump_sigma(amplitudes: Sequence[np.ndarray], centers: Sequence[np.ndarray],
               widths: Sequence[float]) -> SigmaField:
    """``sigma = sum_q A_q exp(-1/(1 - |x - p_q|^2/w_q^2))`` with analytic derivatives.

    Each ``A_q`` is a constant symmetric matrix; the field is smooth and
    compactly supported in the union of the balls ``B_{w_q}(p_q)``.
    """
    As = [0.5 * (np.asarray(A, float) + np.asarray(A, float).T) for A in amplitudes]
    ps = [np.asarray(p, dtype=float) for p in centers]
    ws = [float(w) for w in widths]

    def value(x):
        out = np.zeros(x.shape[:1] + (3, 3))
        for A, p, w in zip(As, ps, ws):
            _, B, _, _ = _bump_parts(x, p, w)
            out += B[:, None, None] * A
        return out

    def grad(x):
        out = np.zeros(x.shape[:1] + (3, 3, 3))
        for A, p, w in zip(As, ps, ws):
            y, _, B1, _ = _bump_parts(x, p, w)
            ds = 2.0 * y / w**2
            out += (B1[:, None] * ds)[:, :, None, None] * A
        return out

    def hess(x):
        out = np.zeros(x.shape[:1] + (3, 3, 3, 3))
        eye = np.eye(3)
        for A, p, w in zip(As, ps, ws):
            y, _, B1, B2 = _bump_parts(x, p, w)
            ds = 2.0 * y / w**2
            d2 = B2[:, None, None] * ds[:, :, None] * ds[:, None, :] \
                + (2.0 * B1 / w**2)[:, None, None] * eye
            out += d2[:, :, :, None, None] * A
        return out

    return SigmaField(value, grad, hess)


def random_bump_sigma(seed: int, center, radius: float, n_bumps: int = 3,
                      margin: float = 0.3) -> SigmaField:
    """Seeded random :func:`bump_sigma` whose every bump contains ``B_{radius(1+margin)}(center)``.

    The integrands of ball and sphere integrals over slightly moved copies of
    the ball are then analytic, so Gauss rules converge geometrically.
    """
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    amps, cents, widths = [], [], []
    for _ in range(n_bumps):
        A = rng.standard_normal((3, 3))
        amps.append(0.01 * (A + A.T))
        offset = rng.standard_normal(3)
        offset *= rng.uniform(0.0, 1.0) * radius / np.linalg.norm(offset)
        cents.append(center + offset)
        widths.append((np.linalg.norm(offset) + radius * (1.0 + margin)) * rng.uniform(1.5, 3.0))
    return bump_sigma(amps, cents, widths)


def quadrupole_sigma(strength: float = 1.0) -> SigmaField:
    """``sigma = strength (3 x x^T / |x|^4 - delta / |x|^2)``, homogeneous of degree -2."""
    eye = np.eye(3)

    def value(x):
        r2 = np.sum(x**2, axis=1)
        return strength * (3.0 * x[:, :, None] * x[:, None, :] / r2[:, None, None] ** 2
                           - eye / r2[:, None, None])

    def grad(x):
        r2 = np.sum(x**2, axis=1)[:, None, None, None]
        xl = x[:, :, None, None]
        xi = x[:, None, :, None]
        xj = x[:, None, None, :]
        dl_i = eye[None, :, :, None]
        dl_j = eye[None, :, None, :]
        dij = eye[None, None, :, :]
        g = 3.0 * (dl_i * xj + dl_j * xi) / r2**2 - 12.0 * xi * xj * xl / r2**3 \
            + 2.0 * xl * dij / r2**2
        return strength * g

    return SigmaField(value, grad, None, decay_constants={0: 2.0 * abs(strength)})
