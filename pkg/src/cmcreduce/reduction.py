"""Lyapunov-Schmidt reduction for outlying spheres.

For a centre parameter ``xi`` (``|xi| > 1``) and scale ``lam``,
:func:`solve_graph` finds the graph ``Sigma`` over ``S_r(lam xi)`` that

* encloses ``g``-volume ``4 pi lam^3 / 3``,
* has height ``u`` orthogonal to constants and linear functions, and
* has mean curvature whose projection onto degrees ``>= 2`` vanishes.

Its area as a function of ``xi`` is the reduced functional; critical points in
``xi`` are CMC spheres.  The remainder of the module holds the closed-form
expansion predictors, the Euclidean functional ``F_sigma`` with its exact
radial-variation identity, and a least-squares fit of the large-``lam`` limit
against ``F_0``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from cmcreduce import geometry as geo
from cmcreduce.harmonics import HarmonicBasis, HarmonicField, invert_jacobi, project
from cmcreduce.metrics import (MetricSpec, gradient_of, laplacian_scalar_curvature,
                               radial_curvature_derivatives, scalar_curvature)
from cmcreduce.quadrature import BallRule, SphereRule, integrate_ball, integrate_sphere

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """The fixed-point iteration did not meet its tolerances."""


@dataclass(frozen=True)
class SolverOptions:
    """Numerical parameters of :func:`solve_graph`.

    ``tol_H`` is ``tol_H_scale / lam`` (absolute sup norm of the degree ``>= 2``
    part of the mean curvature); ``tol_V`` is relative.
    """

    L: int = geo.DEFAULT_L
    tol_H_scale: float = 1e-10
    tol_V: float = 1e-10
    max_iter: int = 60
    n_radial: int = geo.DEFAULT_RADIAL_NODES
    volume_max_iter: int = 30


@dataclass
class LSSolution:
    xi: np.ndarray
    lam: float
    surface: geo.GraphSurface = field(repr=False)
    H_residual: float
    volume_error: float
    iterations: int
    area_deficit: float
    conformal_center: float
    log: list = field(default_factory=list, repr=False)

    @property
    def r(self) -> float:
        return self.surface.radius

    @property
    def u(self) -> HarmonicField:
        return self.surface.u

    @property
    def area(self) -> float:
        return 4.0 * math.pi * self.lam**2 + self.area_deficit

    @property
    def psi(self) -> float:
        """``psi`` in ``lam^3 = r^3 Phi(|a|)^6 (1 + psi)``."""
        return (self.surface.r_ref / self.r) ** 3 - 1.0

    def summary(self) -> dict:
        return {
            "xi": [float(v) for v in self.xi], "lambda": self.lam, "r": self.r,
            "area": self.area, "area_deficit": self.area_deficit,
            "H_residual": self.H_residual, "volume_error": self.volume_error,
            "iterations": self.iterations, "sup_u": self.u.sup(), "psi": self.psi,
        }


def _volume_slope(spec, surf: geo.GraphSurface) -> float:
    """``d dV / de``: the relative volume element integrated over the graph."""
    rho = surf.radius + surf.u.values
    n = surf.basis.rule.nodes
    _, k = geo._relative_metric(spec, surf.center, rho[:, None] * n)
    vol_el = np.sqrt(np.linalg.det(np.eye(3) + k))
    return float(np.dot(surf.basis.rule.weights, rho**2 * vol_el))


def _solve_volume(spec, surf: geo.GraphSurface, opts: SolverOptions) -> tuple[geo.GraphSurface, float]:
    """Adjust ``e`` so the enclosed volume equals ``4 pi r_ref^3 c^6 / 3``.

    Newton's method on ``e`` (the reported error is the residual before the
    last, negligible step); a bracketed Brent search is the fallback.
    """
    r0 = surf.r_ref

    def dV(e):
        return geo.volume_deficit_parts(spec, surf.with_e(e), opts.n_radial)[1]

    e = surf.e
    for _ in range(opts.volume_max_iter):
        val = dV(e)
        step = -val / _volume_slope(spec, surf.with_e(e))
        e += step
        if abs(step) <= 1e-13 * r0:
            break
    else:
        lo, hi = -0.1 * r0, 0.1 * r0
        e = optimize.brentq(dV, lo, hi, xtol=1e-15 * r0, rtol=4e-16)
        val = dV(e)
    vol_err = abs(val) / (4.0 * math.pi * r0**3 / 3.0)
    return surf.with_e(e), vol_err


def solve_graph(spec: MetricSpec, xi, lam: float, options: Optional[SolverOptions] = None,
                initial: Optional[LSSolution] = None) -> LSSolution:
    """Solve the projected CMC problem for ``(xi, lam)``.

    Picard iteration on the height ``u`` preconditioned by the round-sphere
    Jacobi operator: ``u <- u + Phi(|a|)^2 J^-1 P_{>=2} H_g`` where ``J`` is
    ``Delta_{S_r} + 2/r^2``; the volume constraint is re-imposed on ``r`` after
    every update.

    Raises
    ------
    ConvergenceError
        When the tolerances are not met within ``max_iter`` iterations.
    """
    opts = options or SolverOptions()
    xi = np.asarray(xi, dtype=float).reshape(3)
    if np.linalg.norm(xi) <= 1.0:
        raise ValueError("|xi| must exceed 1")
    a = lam * xi
    an = float(np.linalg.norm(a))
    c = float(spec.conformal_factor(an)) if an > 0 else 1.0
    basis = HarmonicBasis.build(opts.L)
    r_ref = lam / c**2
    if initial is not None and np.allclose(initial.xi, xi, rtol=0, atol=0) and initial.lam == lam \
            and initial.u.L == opts.L:
        surf = initial.surface
    else:
        warm = initial is not None and initial.u.L == opts.L
        u0 = initial.u if warm else basis.zeros()
        surf = geo.GraphSurface(a, r_ref, u0, initial.surface.e if warm else 0.0)
    tol_H = opts.tol_H_scale / lam
    history = []
    for it in range(opts.max_iter + 1):
        surf, vol_err = _solve_volume(spec, surf, opts)
        H = basis.analyze(geo.mean_curvature(spec, surf))
        high = project(H, "L>=2")
        res = high.sup()
        history.append({"iteration": it, "H_residual": res, "volume_error": vol_err, "e": surf.e})
        log.debug("iter %d: H_res %.3e vol_err %.3e", it, res, vol_err)
        if res <= tol_H and vol_err <= opts.tol_V:
            D = geo.area_deficit(spec, surf)
            return LSSolution(xi, float(lam), surf, res, vol_err, it, D, c, history)
        if it == opts.max_iter:
            break
        du = invert_jacobi(high, surf.radius) * c**2
        surf = surf.with_u(project(surf.u + du, "L>=2"))
    raise ConvergenceError(
        f"no convergence after {opts.max_iter} iterations: H residual {res:.3e} (tol {tol_H:.1e}),"
        f" volume error {vol_err:.3e}")


def reduced_area(spec: MetricSpec, xi, lam: float, options: Optional[SolverOptions] = None) -> float:
    return solve_graph(spec, xi, lam, options).area


def reduced_deficit(spec: MetricSpec, xi, lam: float, options: Optional[SolverOptions] = None,
                    initial: Optional[LSSolution] = None) -> float:
    """``reduced_area - 4 pi lam^2`` evaluated without cancellation."""
    return solve_graph(spec, xi, lam, options, initial).area_deficit


def radial_derivative(spec: MetricSpec, xi, lam: float, rel_step: float = 1e-3,
                      options: Optional[SolverOptions] = None,
                      base: Optional[LSSolution] = None) -> tuple[float, float]:
    """``d/ds reduced_area(s xi)`` at ``s = 1`` by central differences.

    Uses steps ``rel_step`` and ``rel_step / 2`` with Richardson extrapolation.
    Returns the derivative and the size of the Richardson correction.
    """
    xi = np.asarray(xi, dtype=float)
    vals = {}
    for s in (-1.0, -0.5, 0.5, 1.0):
        vals[s] = reduced_deficit(spec, (1.0 + s * rel_step) * xi, lam, options, base)
    d1 = (vals[1.0] - vals[-1.0]) / (2.0 * rel_step)
    d2 = (vals[0.5] - vals[-0.5]) / rel_step
    return (4.0 * d2 - d1) / 3.0, abs(d2 - d1) / 3.0


def radial_second_difference(spec: MetricSpec, xi, lam: float, rel_step: float = 1e-2,
                             options: Optional[SolverOptions] = None) -> float:
    """``d^2/ds^2 reduced_area(s xi)`` at ``s = 1``."""
    xi = np.asarray(xi, dtype=float)
    f = {s: reduced_deficit(spec, (1.0 + s * rel_step) * xi, lam, options) for s in (-1.0, 0.0, 1.0)}
    return (f[1.0] - 2.0 * f[0.0] + f[-1.0]) / rel_step**2


def xi_hessian(spec: MetricSpec, xi, lam: float, rel_step: float = 1e-2,
               options: Optional[SolverOptions] = None) -> np.ndarray:
    """Second-difference Hessian of the reduced functional in ``xi``."""
    xi = np.asarray(xi, dtype=float)
    h = rel_step * float(np.linalg.norm(xi))
    eye = np.eye(3)
    cache = {}

    def F(v):
        key = tuple(np.round(v / h).astype(int))
        if key not in cache:
            cache[key] = reduced_deficit(spec, xi + h * v, lam, options)
        return cache[key]
    Hm = np.zeros((3, 3))
    f0 = F(np.zeros(3))
    for i in range(3):
        Hm[i, i] = (F(eye[i]) - 2 * f0 + F(-eye[i])) / h**2
        for j in range(i + 1, 3):
            v = (F(eye[i] + eye[j]) - F(eye[i] - eye[j]) - F(-eye[i] + eye[j])
                 + F(-eye[i] - eye[j])) / (4 * h**2)
            Hm[i, j] = Hm[j, i] = v
    return Hm


# ---------------------------------------------------------------------------
# closed forms


_F0_SERIES_K = np.arange(3, 60)
_F0_SERIES_C = -16.0 / (_F0_SERIES_K + 1) + 30.0 / (2 * _F0_SERIES_K + 1) - 2.0 / (2 * _F0_SERIES_K - 1)
_F0_SWITCH = 3.0


def F0(t) -> np.ndarray:
    """``-14 + 16 t^2 log((t^2-1)/t^2) + (15 t - 1/t) log((t+1)/(t-1))`` for ``t > 1``.

    For ``t >= 3`` the convergent expansion ``sum_k c_k t^-2k`` (leading term
    ``-4/35 t^-6``) replaces the closed form, which cancels catastrophically.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 1.0):
        raise ValueError("F0 needs t > 1")
    out = np.empty_like(t)
    near = t < _F0_SWITCH
    tn = t[near]
    out[near] = (-14.0 + 16.0 * tn**2 * np.log1p(-1.0 / tn**2)
                 + (15.0 * tn - 1.0 / tn) * np.log((tn + 1.0) / (tn - 1.0)))
    tf = t[~near]
    out[~near] = np.sum(_F0_SERIES_C[None, :] * tf[:, None] ** (-2.0 * _F0_SERIES_K[None, :]), axis=1)
    return out if out.ndim else float(out)


def F0_prime(t) -> np.ndarray:
    """Derivative of :func:`F0`."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 1.0):
        raise ValueError("F0 needs t > 1")
    out = np.empty_like(t)
    near = t < _F0_SWITCH
    tn = t[near]
    L1 = np.log1p(-1.0 / tn**2)
    L2 = np.log((tn + 1.0) / (tn - 1.0))
    out[near] = (32.0 * tn * L1 + 32.0 * tn / (tn**2 - 1.0)
                 + (15.0 + tn**-2) * L2 - 2.0 * (15.0 * tn - 1.0 / tn) / (tn**2 - 1.0))
    tf = t[~near]
    k = _F0_SERIES_K[None, :]
    out[~near] = np.sum(-2.0 * k * _F0_SERIES_C[None, :] * tf[:, None] ** (-2.0 * k - 1.0), axis=1)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# F_sigma and the radial-variation identity


def _rules(degree: int):
    return SphereRule.for_degree(degree), BallRule.for_degree(degree)


def F_sigma(spec: MetricSpec, xi, lam: float, degree: int = 40) -> float:
    """``1/2 int_S (tr sigma - sigma(nu, nu)) - (1/lam) int_B tr sigma`` over ``S_lam(lam xi)``.

    All integrals are Euclidean; ``nu`` is the Euclidean unit normal.
    """
    if spec.sigma is None:
        return 0.0
    xi = np.asarray(xi, dtype=float)
    a = lam * xi
    srule, brule = _rules(degree)
    sig = spec.sigma

    def tangential(x):
        s = sig.eval(x, 0)
        nu = (x - a) / lam
        return np.einsum("kii->k", s) - np.einsum("ki,kij,kj->k", nu, s, nu)

    def trace(x):
        return np.einsum("kii->k", sig.eval(x, 0))

    return 0.5 * integrate_sphere(tangential, a, lam, srule) - integrate_ball(trace, a, lam, brule) / lam


def radial_variation_rhs(spec: MetricSpec, xi, lam: float, degree: int = 40) -> float:
    """``1/2 int_B (d_i d_j sigma_ij - Delta tr sigma) <xi, lam xi - X>``.

    This is ``d/ds F_sigma(s xi, lam)`` at ``s = 1`` exactly; ``d_i d_j sigma_ij
    - Delta tr sigma`` is the divergence of ``Div sigma - grad tr sigma``.
    """
    if spec.sigma is None:
        return 0.0
    xi = np.asarray(xi, dtype=float)
    a = lam * xi
    _, brule = _rules(degree)
    sig = spec.sigma

    def integrand(x):
        h = sig.eval(x, 2)  # [k, l, m, i, j]
        div_w = np.einsum("kijij->k", h) - np.einsum("kllii->k", h)
        return div_w * ((a - x) @ xi)

    return 0.5 * integrate_ball(integrand, a, lam, brule)


def F_sigma_radial_fd(spec: MetricSpec, xi, lam: float, ds: float = 1e-4, degree: int = 40) -> float:
    """Central difference of ``s -> F_sigma(s xi, lam)`` at ``s = 1`` (Richardson over ``ds``, ``ds/2``)."""
    xi = np.asarray(xi, dtype=float)

    def F(s):
        return F_sigma(spec, s * xi, lam, degree)
    d1 = (F(1 + ds) - F(1 - ds)) / (2 * ds)
    d2 = (F(1 + ds / 2) - F(1 - ds / 2)) / ds
    return (4 * d2 - d1) / 3


# ---------------------------------------------------------------------------
# expansion predictors


def curvature_terms(spec: MetricSpec, x) -> dict:
    """``R``, ``Delta R`` and their origin-radial derivatives at ``x``."""
    x = np.asarray(x, dtype=float).reshape(3)
    r = float(np.linalg.norm(x))
    if spec.is_radial:
        d = radial_curvature_derivatives(spec, r)
        return {"R": d["R"], "lap_R": d["lap"], "dr_R": d["d1"], "dr_lap_R": d["d_lap"]}
    R = float(scalar_curvature(spec, x))
    lap = laplacian_scalar_curvature(spec, x)
    xh = x / r
    H = 2e-2 * r
    dr_R = float(gradient_of(lambda p: scalar_curvature(spec, p), x, H) @ xh)
    hr = 2e-2 * r
    dr_lap = (laplacian_scalar_curvature(spec, x + hr * xh)
              - laplacian_scalar_curvature(spec, x - hr * xh)) / (2 * hr)
    return {"R": R, "lap_R": lap, "dr_R": dr_R, "dr_lap_R": dr_lap}


@dataclass
class ExpansionReport:
    """Measured reduced area against the large-sphere expansion."""

    xi: list
    lam: float
    measured_deficit: Optional[float]
    terms: dict
    predicted_deficit: float

    @property
    def residual(self) -> Optional[float]:
        if self.measured_deficit is None:
            return None
        return self.measured_deficit - self.predicted_deficit

    def as_dict(self) -> dict:
        return {"xi": self.xi, "lambda": self.lam, "measured_deficit": self.measured_deficit,
                "predicted_deficit": self.predicted_deficit, "residual": self.residual,
                "terms": self.terms, "area_leading": 4 * math.pi * self.lam**2}


def predict_lsreduction(spec: MetricSpec, xi, lam: float, measured: Optional[float] = None,
                        solve: bool = False, options: Optional[SolverOptions] = None) -> ExpansionReport:
    """``4 pi lam^2 - (2pi/15) lam^4 R - (pi/105) lam^6 Delta R - (8pi/35)|xi|^-6`` at ``lam xi``.

    Terms are reported as deficits (the ``4 pi lam^2`` term is omitted from the
    sums).  With ``solve=True`` the measured deficit is computed.
    """
    xi = np.asarray(xi, dtype=float)
    t = float(np.linalg.norm(xi))
    ct = curvature_terms(spec, lam * xi) if not (spec.is_radial and spec.profile is None) \
        else {"R": 0.0, "lap_R": 0.0}
    terms = {
        "R_term": -(2 * math.pi / 15) * lam**4 * ct["R"],
        "lap_R_term": -(math.pi / 105) * lam**6 * ct["lap_R"],
        "mass_term": -(8 * math.pi / 35) * t**-6,
    }
    pred = sum(terms.values())
    if solve and measured is None:
        measured = reduced_deficit(spec, xi, lam, options)
    return ExpansionReport([float(v) for v in xi], float(lam), measured, terms, pred)


def predict_lsradial(spec: MetricSpec, xi, lam: float) -> float:
    """``(pi/105)(-14 lam^5 |xi| d_r R - lam^7 |xi| d_r Delta R + 144 |xi|^-6)``.

    This is the prediction for ``d/ds reduced_area(s xi)`` at ``s = 1``.
    """
    return sum(predict_lsradial_terms(spec, xi, lam).values())


def predict_lsradial_terms(spec: MetricSpec, xi, lam: float) -> dict:
    xi = np.asarray(xi, dtype=float)
    t = float(np.linalg.norm(xi))
    if spec.is_radial and spec.profile is None:
        ct = {"dr_R": 0.0, "dr_lap_R": 0.0}
    else:
        ct = curvature_terms(spec, lam * xi)
    c = math.pi / 105
    return {"R_term": -14 * c * lam**5 * t * ct["dr_R"],
            "lap_R_term": -c * lam**7 * t * ct["dr_lap_R"],
            "mass_term": 144 * c * t**-6}


# ---------------------------------------------------------------------------
# coefficient fit


CANDIDATE_F0_CONSTANTS = {"pi/2": math.pi / 2, "2pi": 2 * math.pi}


@dataclass
class FitResult:
    c_F0: float
    c_Fsigma: Optional[float]
    intercept: float
    per_xi: dict
    residuals: dict
    condition_number: float
    supported_constant: str
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"c_F0": self.c_F0, "c_Fsigma": self.c_Fsigma, "intercept": self.intercept,
                "per_xi": self.per_xi, "residuals": self.residuals,
                "condition_number": self.condition_number,
                "supported_constant": self.supported_constant, **self.diagnostics}


def fit_BE_coefficient(spec: MetricSpec, xi_samples: Sequence, lam_schedule: Sequence[float],
                       options: Optional[SolverOptions] = None, direction=(0.0, 0.0, 1.0),
                       deficits: Optional[dict] = None) -> FitResult:
    """Fit ``lim_{lam->inf} (reduced_area - 4 pi lam^2)`` against ``F0(|xi|)`` and ``F_sigma``.

    For each ``xi`` the measured deficits ``D(lam)`` are extrapolated to
    ``lam -> inf`` by a least-squares line in ``1/lam``; the limits are then
    fitted jointly against ``[F0, F_sigma, 1]`` (columns that vanish
    identically are dropped).  ``residuals[xi][lam]`` is
    ``|D(lam) - c_F0 F0 - c_Fsigma F_sigma|``.  ``xi_samples`` may be norms
    (placed along ``direction``) or vectors.
    """
    lams = np.asarray(sorted(lam_schedule), dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    xis = [np.asarray(x, dtype=float) * (d if np.ndim(x) == 0 else 1.0) for x in xi_samples]
    names = [f"{np.linalg.norm(x):g}" for x in xis]
    D = {}
    for name, x in zip(names, xis):
        D[name] = {}
        for lam in lams:
            if deficits is not None and (name, lam) in deficits:
                D[name][float(lam)] = deficits[(name, lam)]
            else:
                D[name][float(lam)] = reduced_deficit(spec, x, lam, options)
    limits, per_xi = [], {}
    X1 = np.stack([np.ones_like(lams), 1.0 / lams], axis=1)
    for name, x in zip(names, xis):
        y = np.array([D[name][float(l)] for l in lams])
        coef, *_ = np.linalg.lstsq(X1, y, rcond=None)
        limits.append(coef[0])
        f0 = float(F0(np.linalg.norm(x)))
        per_xi[name] = {"limit": float(coef[0]), "slope_1_over_lambda": float(coef[1]),
                        "F0": f0, "ratio_limit_over_F0": float(coef[0] / f0),
                        "deficits": {f"{l:g}": D[name][float(l)] for l in lams}}
    limits = np.array(limits)
    f0s = np.array([float(F0(np.linalg.norm(x))) for x in xis])
    fs = np.array([[F_sigma(spec, x, lam) for lam in lams] for x in xis])
    fs_lim = fs[:, -1]
    cols, labels = [f0s], ["F0"]
    if np.max(np.abs(fs)) > 0:
        cols.append(fs_lim); labels.append("F_sigma")
    if len(xis) > len(cols):
        cols.append(np.ones_like(f0s)); labels.append("intercept")
    A = np.stack(cols, axis=1)
    cond = float(np.linalg.cond(A))
    if cond > 1e6:
        warnings.warn(f"ill-conditioned coefficient fit (condition number {cond:.2e})", RuntimeWarning)
    coef, *_ = np.linalg.lstsq(A, limits, rcond=None)
    fitted = dict(zip(labels, coef))
    c_f0 = float(fitted["F0"])
    c_fs = float(fitted["F_sigma"]) if "F_sigma" in fitted else None
    icpt = float(fitted.get("intercept", 0.0))
    residuals = {}
    for i, name in enumerate(names):
        residuals[name] = {}
        for j, lam in enumerate(lams):
            pred = c_f0 * f0s[i] + (c_fs or 0.0) * fs[i, j]
            residuals[name][f"{lam:g}"] = float(abs(D[name][float(lam)] - pred))
    supported = min(CANDIDATE_F0_CONSTANTS, key=lambda k: abs(CANDIDATE_F0_CONSTANTS[k] - c_f0))
    ratios = np.array([per_xi[n]["ratio_limit_over_F0"] for n in names])
    diag = {
        "ratio_spread": float((ratios.max() - ratios.min()) / abs(np.mean(ratios))),
        "relative_deviation_from_candidates": {
            k: float(abs(c_f0 - v) / v) for k, v in CANDIDATE_F0_CONSTANTS.items()},
        "columns": labels,
        "F_sigma_identically_zero": "F_sigma" not in labels,
    }
    return FitResult(c_f0, c_fs, icpt, per_xi, residuals, cond, supported, diag)
