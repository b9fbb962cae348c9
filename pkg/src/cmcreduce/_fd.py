"""Central finite differences with one Richardson step."""

from __future__ import annotations

from typing import Callable

import numpy as np

# second-order central stencils: offsets and weights, divided by h**order
_STENCILS = {
    1: (np.array([-1.0, 1.0]), np.array([-0.5, 0.5])),
    2: (np.array([-1.0, 0.0, 1.0]), np.array([1.0, -2.0, 1.0])),
    3: (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([-0.5, 1.0, -1.0, 0.5])),
}


def fd_step(x_norm: float) -> float:
    return max(1e-4 * x_norm, 1e-5)


def central(f: Callable[[float], np.ndarray], x: float, h: float, order: int = 1) -> np.ndarray:
    """Order-``order`` derivative of ``f`` at ``x`` by a second-order stencil."""
    offs, w = _STENCILS[order]
    acc = sum(wi * np.asarray(f(x + oi * h), dtype=float) for oi, wi in zip(offs, w))
    return acc / h**order


def richardson(f: Callable[[float], np.ndarray], x: float, h: float, order: int = 1) -> np.ndarray:
    """Second-order stencil at ``h`` and ``h/2`` combined to fourth order."""
    d1 = central(f, x, h, order)
    d2 = central(f, x, 0.5 * h, order)
    return (4.0 * d2 - d1) / 3.0


def richardson_pair(f: Callable[[float], np.ndarray], x: float, h: float,
                    order: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Richardson value together with the magnitude of the correction (error proxy)."""
    d1 = central(f, x, h, order)
    d2 = central(f, x, 0.5 * h, order)
    return (4.0 * d2 - d1) / 3.0, np.abs(d2 - d1) / 3.0
