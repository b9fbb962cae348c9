"""Real spherical harmonics on the product Gauss grid.

Basis functions are orthonormal on the unit sphere:

    Y_l0 = P_l0(cos t),  Y_lm^c = sqrt(2) P_lm cos(m p),  Y_lm^s = sqrt(2) P_lm sin(m p)

with ``P_lm`` the associated Legendre functions normalised so that every basis
function has unit L2 norm on the sphere.  Coefficients are stored in a flat vector in ``(l, m)`` order with
the cosine and sine members adjacent; :func:`degree_of_index` maps back.

Analysis and synthesis are dense matrix products; the grid has at most a few
thousand nodes, so no fast transform is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from cmcreduce.quadrature import SphereRule

SUBSPACES = ("L0", "L1", "L2", "L>1", "L>2", "L>=2", "L0+L1")


class KernelViolation(ValueError):
    """Right-hand side has a component along the kernel of the Jacobi operator."""


def n_coefficients(L: int) -> int:
    return (L + 1) ** 2


def _index_table(L: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ls, ms, kinds = [], [], []
    for l in range(L + 1):
        ls.append(l); ms.append(0); kinds.append(0)
        for m in range(1, l + 1):
            ls += [l, l]; ms += [m, m]; kinds += [1, -1]
    return np.array(ls), np.array(ms), np.array(kinds)


def degree_of_index(L: int) -> np.ndarray:
    """Degree ``l`` of every flat coefficient slot."""
    return _index_table(L)[0]


def _legendre_table(L: int, theta: np.ndarray):
    """Normalised ``P_lm(cos theta)`` and its first two ``theta`` derivatives.

    Returns arrays of shape ``(L+1, L+1, K)`` indexed ``[l, m]``.
    """
    x = np.cos(theta)
    s = np.sin(theta)
    K = theta.shape[0]
    P = np.zeros((L + 1, L + 1, K))
    P[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, L + 1):
        P[m, m] = -math.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(0, L):
        P[m + 1, m] = math.sqrt(2 * m + 3) * x * P[m, m]
    for m in range(0, L + 1):
        for l in range(m + 2, L + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l, m] = a * (x * P[l - 1, m] - b * P[l - 2, m])
    dP = np.zeros_like(P)
    for m in range(0, L + 1):
        for l in range(m, L + 1):
            prev = P[l - 1, m] if l - 1 >= m else 0.0
            c = math.sqrt((2 * l + 1) / (2 * l - 1) * (l - m) * (l + m)) if l > m else 0.0
            dP[l, m] = (l * x * P[l, m] - c * prev) / s
    m_arr = np.arange(L + 1)[None, :, None]
    l_arr = np.arange(L + 1)[:, None, None]
    d2P = -(x / s) * dP - (l_arr * (l_arr + 1) - m_arr**2 / s**2) * P
    return P, dP, d2P


@dataclass(frozen=True)
class HarmonicBasis:
    """Basis matrices for degree cap ``L`` on a given sphere rule.

    ``Y[k, j]`` is basis function ``j`` at node ``k``; ``Y_t``, ``Y_p`` are the
    ``theta`` and ``phi`` derivatives, ``Y_tt``, ``Y_tp``, ``Y_pp`` second
    derivatives.
    """

    L: int
    rule: SphereRule
    Y: np.ndarray = field(repr=False)
    Y_t: np.ndarray = field(repr=False)
    Y_p: np.ndarray = field(repr=False)
    Y_tt: np.ndarray = field(repr=False)
    Y_tp: np.ndarray = field(repr=False)
    Y_pp: np.ndarray = field(repr=False)
    degrees: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, L: int, rule: SphereRule | None = None) -> "HarmonicBasis":
        if rule is None:
            rule = SphereRule.for_degree(2 * L + 1)
        if rule.exactness_degree < 2 * L:
            raise ValueError(f"rule exact to degree {rule.exactness_degree} < 2L = {2 * L}")
        return _cached_basis(L, rule.n_polar)

    def analyze(self, values) -> "HarmonicField":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.rule),):
            raise ValueError(f"expected {len(self.rule)} grid values, got shape {values.shape}")
        coeffs = self.Y.T @ (self.rule.weights * values)
        return HarmonicField(self, coeffs)

    def from_coefficients(self, coeffs) -> "HarmonicField":
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (n_coefficients(self.L),):
            raise ValueError("coefficient vector has wrong length")
        return HarmonicField(self, coeffs)

    def zeros(self) -> "HarmonicField":
        return HarmonicField(self, np.zeros(n_coefficients(self.L)))

    def mask(self, subspace: str) -> np.ndarray:
        l = self.degrees
        masks = {
            "L0": l == 0, "L1": l == 1, "L2": l == 2,
            "L>1": l > 1, "L>=2": l >= 2, "L>2": l > 2,
            "L0+L1": l <= 1,
        }
        try:
            return masks[subspace]
        except KeyError:
            raise ValueError(f"unknown subspace {subspace!r}; choose from {SUBSPACES}") from None


def _make_basis(L: int, rule: SphereRule) -> HarmonicBasis:
    n_az = rule.n_azimuth
    theta_u = rule.theta[::n_az]
    P, dP, d2P = _legendre_table(L, theta_u)
    ls, ms, kinds = _index_table(L)
    K = len(rule)
    ip = np.repeat(np.arange(rule.n_polar), n_az)
    mats = {k: np.zeros((K, len(ls))) for k in ("Y", "t", "p", "tt", "tp", "pp")}
    for j, (l, m, kind) in enumerate(zip(ls, ms, kinds)):
        if kind == 0:
            trig, dtrig, scale = np.ones(K), np.zeros(K), 1.0
        elif kind == 1:
            trig, dtrig, scale = np.cos(m * rule.phi), -m * np.sin(m * rule.phi), math.sqrt(2.0)
        else:
            trig, dtrig, scale = np.sin(m * rule.phi), m * np.cos(m * rule.phi), math.sqrt(2.0)
        p, dp, d2p = P[l, m][ip], dP[l, m][ip], d2P[l, m][ip]
        mats["Y"][:, j] = scale * p * trig
        mats["t"][:, j] = scale * dp * trig
        mats["p"][:, j] = scale * p * dtrig
        mats["tt"][:, j] = scale * d2p * trig
        mats["tp"][:, j] = scale * dp * dtrig
        mats["pp"][:, j] = -(m**2) * scale * p * trig
    for v in mats.values():
        v.setflags(write=False)
    return HarmonicBasis(L, rule, mats["Y"], mats["t"], mats["p"], mats["tt"],
                         mats["tp"], mats["pp"], ls)


@lru_cache(maxsize=16)
def _cached_basis(L: int, n_polar: int) -> HarmonicBasis:
    return _make_basis(L, SphereRule.gauss_product(n_polar))


@dataclass(frozen=True)
class HarmonicField:
    """A band-limited function on the unit sphere.

    Stored as spectral coefficients; grid values and derivatives are
    synthesised on demand.
    """

    basis: HarmonicBasis
    coeffs: np.ndarray

    @property
    def L(self) -> int:
        return self.basis.L

    @property
    def values(self) -> np.ndarray:
        return self.basis.Y @ self.coeffs

    def derivatives(self) -> dict[str, np.ndarray]:
        """Grid values of the field and its angular derivatives up to order two."""
        b, c = self.basis, self.coeffs
        return {"u": b.Y @ c, "t": b.Y_t @ c, "p": b.Y_p @ c,
                "tt": b.Y_tt @ c, "tp": b.Y_tp @ c, "pp": b.Y_pp @ c}

    def __add__(self, other: "HarmonicField") -> "HarmonicField":
        return HarmonicField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "HarmonicField") -> "HarmonicField":
        return HarmonicField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "HarmonicField":
        return HarmonicField(self.basis, self.coeffs * s)

    __rmul__ = __mul__

    def norm(self) -> float:
        """L2 norm on the unit sphere."""
        return float(np.linalg.norm(self.coeffs))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def laplacian(self, r: float = 1.0) -> "HarmonicField":
        l = self.basis.degrees
        return HarmonicField(self.basis, -l * (l + 1) / r**2 * self.coeffs)


def analyze(values, basis: HarmonicBasis) -> HarmonicField:
    return basis.analyze(values)


def synthesize(f: HarmonicField) -> np.ndarray:
    return f.values


def project(f: HarmonicField, subspace: str) -> HarmonicField:
    """Orthogonal projection onto one of the eigenspace sums in :data:`SUBSPACES`."""
    return HarmonicField(f.basis, np.where(f.basis.mask(subspace), f.coeffs, 0.0))


def apply_jacobi(u: HarmonicField, r: float) -> HarmonicField:
    """``(Delta_{S_r} + 2/r^2) u``."""
    l = u.basis.degrees
    return HarmonicField(u.basis, (2.0 - l * (l + 1)) / r**2 * u.coeffs)


def invert_jacobi(rhs: HarmonicField, r: float, kernel_tol: float = 1e-9) -> HarmonicField:
    """Solve ``(Delta_{S_r} + 2/r^2) u = rhs`` with ``u`` orthogonal to degree one.

    Raises
    ------
    KernelViolation
        If the degree-one part of ``rhs`` exceeds ``kernel_tol`` times its norm
        (absolute when ``rhs`` is tiny).
    """
    l = rhs.basis.degrees
    k1 = float(np.linalg.norm(rhs.coeffs[l == 1]))
    if k1 > kernel_tol * max(rhs.norm(), 1e-300) and k1 > 0.0:
        raise KernelViolation(f"degree-one component of norm {k1:.3e} in Jacobi right-hand side")
    eig = (2.0 - l * (l + 1)) / r**2
    out = np.where(l == 1, 0.0, rhs.coeffs / np.where(l == 1, 1.0, eig))
    return HarmonicField(rhs.basis, out)
