"""Radial scans of the reduced functional and the pulsed counterexample metrics.

Along a ray ``xi(t) = xi_scale * t * e`` the reduced deficit
``D(t) = reduced_area(xi(t), lam) - 4 pi lam^2`` is sampled together with its
``t``-derivative (central differences, Richardson) and the derivative
predicted by the large-sphere expansion.  Sign changes of ``D'`` are refined
by bisection; a sign change from negative to positive with positive second
difference is a stable critical point.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from cmcreduce import reduction as red
from cmcreduce.metrics import (MetricSpec, gradient_of, radial_curvature,
                               radial_curvature_derivatives, scalar_curvature, thm13_metric,
                               thm17_metric)

E3 = (0.0, 0.0, 1.0)


@dataclass
class ScanPoint:
    t: float
    deficit: float
    derivative: float
    derivative_error: float
    predicted_derivative: Optional[float]


@dataclass
class CriticalPoint:
    t: float
    bracket: tuple[float, float]
    derivative: float
    kind: str  # "minimum" or "maximum"
    second_difference: Optional[float] = None
    stable: Optional[bool] = None
    hessian_eigenvalues: Optional[list] = None


@dataclass
class ScanResult:
    """Table of a radial scan plus located critical points and named checks."""

    lam: float
    xi_scale: float
    direction: list
    points: list = field(default_factory=list)
    critical_points: list = field(default_factory=list)
    t_star: Optional[float] = None
    stable: Optional[bool] = None
    hessian_eigenvalues: Optional[list] = None
    checks: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def derivative_sign_changes(self) -> list[tuple[float, float]]:
        out = []
        for p, q in zip(self.points, self.points[1:]):
            if np.sign(p.derivative) != np.sign(q.derivative):
                out.append((p.t, q.t))
        return out

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def rows(self) -> list[dict]:
        return [asdict(p) for p in self.points]


class _Ray:
    """Reduced functional along ``xi(t) = xi_scale t e`` with warm starts."""

    def __init__(self, spec: MetricSpec, lam: float, xi_scale: float, direction,
                 options: Optional[red.SolverOptions], rel_step: float):
        self.spec, self.lam, self.xi_scale = spec, float(lam), float(xi_scale)
        d = np.asarray(direction, dtype=float)
        self.e = d / np.linalg.norm(d)
        self.options = options
        self.rel_step = rel_step

    def xi(self, t: float) -> np.ndarray:
        return self.xi_scale * t * self.e

    def solve(self, t: float, initial=None) -> red.LSSolution:
        return red.solve_graph(self.spec, self.xi(t), self.lam, self.options, initial)

    def derivative(self, t: float) -> tuple[float, float, float]:
        """``D(t)``, ``dD/dt`` and the Richardson error proxy."""
        base = self.solve(t)
        h = self.rel_step * t
        vals = {s: self.solve(t + s * h, base).area_deficit for s in (-1.0, -0.5, 0.5, 1.0)}
        d1 = (vals[1.0] - vals[-1.0]) / (2 * h)
        d2 = (vals[0.5] - vals[-0.5]) / h
        return base.area_deficit, (4 * d2 - d1) / 3, abs(d2 - d1) / 3

    def predicted(self, t: float) -> float:
        # d/dt = (1/t) d/ds at s = 1
        return red.predict_lsradial(self.spec, self.xi(t), self.lam) / t

    def point(self, t: float, predict: bool = True) -> ScanPoint:
        D, dD, err = self.derivative(t)
        pred = self.predicted(t) if predict else None
        return ScanPoint(float(t), float(D), float(dD), float(err), pred)

    def second_difference(self, t: float, rel: float = 1e-2) -> float:
        h = rel * t
        base = self.solve(t)
        f = {s: (self.solve(t + s * h, base).area_deficit if s else base.area_deficit)
             for s in (-1.0, 0.0, 1.0)}
        return (f[1.0] - 2 * f[0.0] + f[-1.0]) / h**2


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _bisect(ray: _Ray, lo: ScanPoint, hi: ScanPoint, width: float) -> tuple[float, float, float]:
    a, fa = lo.t, lo.derivative
    b, fb = hi.t, hi.derivative
    while b - a > width:
        m = 0.5 * (a + b)
        _, fm, _ = ray.derivative(m)
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b, fb = m, fm
    # linear interpolation inside the final bracket
    t = a - fa * (b - a) / (fb - fa) if fb != fa else 0.5 * (a + b)
    return float(t), float(a), float(b)


def scan_radial(spec: MetricSpec, lam: float, t_range: tuple[float, float],
                n_points: Optional[int] = None, per_unit: float = 25.0, xi_scale: float = 1.0,
                direction=E3, options: Optional[red.SolverOptions] = None,
                rel_step: float = 1e-3, bisect_width: float = 1e-3, refine: bool = True,
                stability: bool = True, hessian: bool = False, predict: bool = True,
                workers: int = 1) -> ScanResult:
    """Uniform scan of ``D(t)`` and ``dD/dt`` on ``t_range``.

    Each sign change of the derivative is bisected to ``bisect_width``;
    minima get a radial second difference and, with ``hessian=True``, the
    eigenvalues of the full ``xi``-Hessian.
    """
    t0, t1 = map(float, t_range)
    if n_points is None:
        n_points = max(2, int(round(per_unit * (t1 - t0))) + 1)
    ts = np.linspace(t0, t1, n_points)
    ray = _Ray(spec, lam, xi_scale, direction, options, rel_step)
    pts = _map(lambda t: ray.point(float(t), predict), ts, workers)
    res = ScanResult(float(lam), float(xi_scale), [float(v) for v in ray.e], pts)
    res.meta = {"n_points": n_points, "rel_step": rel_step, "bisect_width": bisect_width,
                "metric": spec.name}
    if refine:
        for p, q in zip(pts, pts[1:]):
            if np.sign(p.derivative) == np.sign(q.derivative):
                continue
            t, a, b = _bisect(ray, p, q, bisect_width)
            kind = "minimum" if p.derivative < 0 < q.derivative else "maximum"
            cp = CriticalPoint(t, (a, b), float(ray.derivative(t)[1]), kind)
            if stability and kind == "minimum":
                cp.second_difference = float(ray.second_difference(t))
                cp.stable = cp.second_difference > 0
                if hessian:
                    ev = hessian_eigenvalues(spec, ray.xi(t), lam, options)
                    cp.hessian_eigenvalues = ev
                    cp.stable = cp.stable and is_psd(ev)
            res.critical_points.append(cp)
    return res


def hessian_eigenvalues(spec: MetricSpec, xi, lam: float,
                        options: Optional[red.SolverOptions] = None, rel_step: float = 1e-2) -> list:
    H = red.xi_hessian(spec, xi, lam, rel_step, options)
    return [float(v) for v in np.linalg.eigvalsh(H)]


def is_psd(eigenvalues: Sequence[float], rel_tol: float = 1e-3) -> bool:
    """Smallest eigenvalue at least ``-rel_tol`` times the largest (degenerate directions allowed)."""
    ev = np.asarray(eigenvalues)
    return bool(ev.max() > 0 and ev.min() >= -rel_tol * ev.max())


def _check(passed: bool, **info) -> dict:
    return {"passed": bool(passed), **info}


def _located(res: ScanResult, lo: float, hi: float) -> Optional[CriticalPoint]:
    for cp in res.critical_points:
        if cp.kind == "minimum" and lo < cp.t < hi:
            return cp
    return None


# ---------------------------------------------------------------------------
# first construction: pulses 10^{-4k} chi on (3, 4)


def derivative_at(spec: MetricSpec, lam: float, t: float, xi_scale: float = 1.0, direction=E3,
                  options: Optional[red.SolverOptions] = None, rel_step: float = 1e-3) -> ScanPoint:
    return _Ray(spec, lam, xi_scale, direction, options, rel_step).point(t)


def select_A(j: int, A0: float = 1.0, max_doublings: int = 12,
             options: Optional[red.SolverOptions] = None) -> tuple[float, list]:
    """Double ``A`` from ``A0`` until the derivative at ``t = 2 sqrt 2`` is negative."""
    lam = 10.0**j
    A = A0
    trail = []
    for _ in range(max_doublings + 1):
        p = derivative_at(thm13_metric(A), lam, 2.0 * math.sqrt(2.0), options=options)
        trail.append({"A": A, "derivative": p.derivative})
        if p.derivative < 0:
            return A, trail
        A *= 2.0
    raise RuntimeError(f"no A <= {A} gives a negative derivative at 2 sqrt 2; trail {trail}")


def curvature_nonnegative(spec: MetricSpec, r_lo: float, r_hi: float, n: int = 4000) -> dict:
    """``R >= 0`` and ``Phi > 0`` on a log grid ``[r_lo, r_hi]``."""
    rr = np.geomspace(r_lo, r_hi, n)
    R = radial_curvature(spec, rr)
    Phi = spec.conformal_factor(rr)
    return {"passed": bool(np.all(R >= 0) and np.all(Phi > 0)), "min_R": float(R.min()) + 0.0,
            "min_conformal_factor": float(Phi.min()), "r_range": [r_lo, r_hi], "n": n}


def run_thm13(j: int = 1, A: Optional[float] = None, per_unit: float = 25.0,
              n_points: Optional[int] = None, options: Optional[red.SolverOptions] = None,
              workers: int = 1, hessian: bool = False, k_max: int = 24) -> ScanResult:
    """Scan ``t in [2, 9]`` at ``lam = 10^j`` for the first pulsed metric.

    Checks: ``dD/dt < 0`` at ``t = 2 sqrt 2``, ``> 0`` at ``t = 5``, a minimum
    located in ``(2 sqrt 2, 5)`` with positive radial second difference, and
    ``R >= 0`` outside the core.
    """
    lam = 10.0**j
    trail = None
    if A is None:
        A, trail = select_A(j, options=options)
    spec = thm13_metric(A, k_max)
    res = scan_radial(spec, lam, (2.0, 9.0), n_points=n_points, per_unit=per_unit,
                      options=options, workers=workers, hessian=hessian)
    lo, hi = 2.0 * math.sqrt(2.0), 5.0
    p_lo = derivative_at(spec, lam, lo, options=options)
    p_hi = derivative_at(spec, lam, hi, options=options)
    res.checks["derivative_negative_at_2sqrt2"] = _check(p_lo.derivative < 0, value=p_lo.derivative)
    res.checks["derivative_positive_at_5"] = _check(p_hi.derivative > 0, value=p_hi.derivative)
    cp = _located(res, lo, hi)
    if cp is None and p_lo.derivative < 0 < p_hi.derivative:
        t, a, b = _bisect(_Ray(spec, lam, 1.0, E3, options, 1e-3), p_lo, p_hi, 1e-3)
        ray = _Ray(spec, lam, 1.0, E3, options, 1e-3)
        cp = CriticalPoint(t, (a, b), float(ray.derivative(t)[1]), "minimum",
                           ray.second_difference(t))
        cp.stable = cp.second_difference > 0
        res.critical_points.append(cp)
    res.t_star = cp.t if cp else None
    res.stable = cp.stable if cp else None
    res.hessian_eigenvalues = cp.hessian_eigenvalues if cp else None
    res.checks["minimum_in_(2sqrt2,5)"] = _check(cp is not None, t_star=res.t_star)
    res.checks["radial_second_difference_positive"] = _check(
        bool(cp and cp.stable), value=cp.second_difference if cp else None)
    res.checks["R_nonnegative_outside_core"] = curvature_nonnegative(spec, lam, 1e8)
    res.meta.update({"construction": "thm13", "j": j, "A": A, "A_search": trail,
                     "tail_bound": spec.profile.tail_bound})
    return res


# ---------------------------------------------------------------------------
# second construction: pulses 10^{-5k} chi with chi'(5) = -1


def thm17_leading_terms(k: int) -> dict:
    """Leading magnitudes quoted for the second construction (``d/dt`` convention)."""
    return {"t5": -(2 * math.pi / 15) * 10.0 ** (-6 * k),
            "t7": (48 * math.pi / 35) * 10.0 ** (-7 * k) * 7.0**-6}


def run_thm17(k: int = 1, per_unit: float = 25.0, n_points: Optional[int] = None,
              options: Optional[red.SolverOptions] = None, workers: int = 1,
              hessian: bool = False, k_max: int = 24) -> ScanResult:
    """Scan ``t in [3, 7]`` with ``xi = 10^k t e``, ``lam = 10^k``.

    Checks the expected signs ``dD/dt < 0`` at ``t = 5`` and ``> 0`` at
    ``t = 7`` with magnitudes within a factor 3 of :func:`thm17_leading_terms`,
    a minimum in ``(5, 7)`` and a positive radial second difference there.
    Every critical point found on ``[3, 7]`` is reported regardless.
    """
    lam = 10.0**k
    spec = thm17_metric(k_max)
    res = scan_radial(spec, lam, (3.0, 7.0), n_points=n_points, per_unit=per_unit,
                      xi_scale=lam, options=options, workers=workers, hessian=hessian)
    lead = thm17_leading_terms(k)
    p5 = derivative_at(spec, lam, 5.0, xi_scale=lam, options=options)
    p7 = derivative_at(spec, lam, 7.0, xi_scale=lam, options=options)

    def within3(v, ref):
        return bool(np.sign(v) == np.sign(ref) and abs(ref) / 3 <= abs(v) <= 3 * abs(ref))

    res.checks["derivative_negative_at_5"] = _check(p5.derivative < 0, value=p5.derivative,
                                                    predicted_expansion=p5.predicted_derivative)
    res.checks["derivative_positive_at_7"] = _check(p7.derivative > 0, value=p7.derivative,
                                                    predicted_expansion=p7.predicted_derivative)
    res.checks["magnitude_at_5_within_factor_3"] = _check(within3(p5.derivative, lead["t5"]),
                                                          value=p5.derivative, reference=lead["t5"])
    res.checks["magnitude_at_7_within_factor_3"] = _check(within3(p7.derivative, lead["t7"]),
                                                          value=p7.derivative, reference=lead["t7"])
    cp = _located(res, 5.0, 7.0)
    res.t_star = cp.t if cp else None
    res.stable = cp.stable if cp else None
    res.hessian_eigenvalues = cp.hessian_eigenvalues if cp else None
    res.checks["minimum_in_(5,7)"] = _check(cp is not None, t_star=res.t_star)
    res.checks["radial_second_difference_positive"] = _check(
        bool(cp and cp.stable), value=cp.second_difference if cp else None)
    res.meta.update({"construction": "thm17", "k": k, "tail_bound": spec.profile.tail_bound,
                     "stable_minima_found": [cp.t for cp in res.critical_points
                                             if cp.kind == "minimum" and cp.stable]})
    return res


# ---------------------------------------------------------------------------
# radial convexity diagnostics


def radial_convexity(spec: MetricSpec, x) -> float:
    """``x^i x^j d_i d_j R`` at ``x``."""
    x = np.asarray(x, dtype=float).reshape(3)
    r = float(np.linalg.norm(x))
    if spec.is_radial:
        return r**2 * radial_curvature_derivatives(spec, r)["d2"]
    H = 2e-2 * r
    xh = x / r

    def dR(p):
        return np.array([gradient_of(lambda q: scalar_curvature(spec, q), pi, H) @ xh for pi in p])
    g = gradient_of(dR, x, H)
    return float(r**2 * (g @ xh))


def corollary16_diagnostics(spec: MetricSpec, xi=None, lam: Optional[float] = None,
                            r_grid: Optional[Sequence[float]] = None,
                            direction=E3) -> dict:
    """Sign of ``x^i x^j d_i d_j R`` on a radial grid and the size of ``d_r R`` at ``lam xi``.

    The grid defaults to 400 log-spaced radii on ``[10, 10^4]`` plus, for
    pulsed metrics, 50 radii inside each pulse below ``10^4``.
    """
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    if r_grid is None:
        rr = list(np.geomspace(10.0, 1e4, 400))
        if spec.profile is not None:
            for a, b in spec.profile.support:
                if b < 1e4 and a >= 10.0:
                    rr += list(np.linspace(a, b, 52)[1:-1])
        r_grid = sorted(rr)
    vals = np.array([radial_convexity(spec, r * e) for r in r_grid])
    scale = np.max(np.abs(vals)) if np.any(vals) else 1.0
    neg = vals < -1e-12 * scale
    out = {
        "r_grid_size": len(r_grid),
        "convexity_min": float(vals.min()) if len(vals) else 0.0,
        "convexity_max": float(vals.max()) if len(vals) else 0.0,
        "violations": int(np.count_nonzero(neg)),
        "violating_r": [float(r) for r, v in zip(r_grid, neg) if v][:50],
        "condition_holds": bool(not np.any(neg)),
    }
    if xi is not None and lam is not None:
        xi = np.asarray(xi, dtype=float)
        x = lam * xi
        t = float(np.linalg.norm(xi))
        if spec.is_radial:
            dr = radial_curvature_derivatives(spec, float(np.linalg.norm(x)))["d1"]
        else:
            H = 2e-2 * float(np.linalg.norm(x))
            dr = float(gradient_of(lambda q: scalar_curvature(spec, q), x, H) @ (x / np.linalg.norm(x)))
        ref = lam**-5 * t**-7
        out.update({"dr_R": float(dr), "reference_scale": ref, "ratio": float(abs(dr) / ref)})
    return out
