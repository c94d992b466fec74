"""Quadrature helpers for Riesz-type singular kernels |x|^p with p > -d.

The recurring difficulty in this package is integrating kernels of the
form |x - y|^p (p negative) against densities tabulated on uniform
Cartesian grids.  Off-diagonal cells use the midpoint value; the
singular self-cell is replaced by the exact cell average of |y|^p over a
cube centred at the origin, which removes the leading-order quadrature
error at the singularity.
"""

from __future__ import annotations

from functools import lru_cache
from math import gamma, pi

import numpy as np

__all__ = [
    "sphere_surface_area",
    "newtonian_constant",
    "unit_cube_riesz_mean",
    "riesz_kernel_matrix",
]


def sphere_surface_area(n: int) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)


def newtonian_constant(d: int) -> float:
    """Constant c0(d) = 1 / ((d-2) * omega_d) of the Newtonian potential."""
    if d < 3:
        raise ValueError("Newtonian constant requires dimension >= 3")
    return 1.0 / ((d - 2) * sphere_surface_area(d))


@lru_cache(maxsize=None)
def unit_cube_riesz_mean(p: float, d: int, refine: int = 64) -> float:
    """Mean of |y|^p over the unit cube [-1/2, 1/2]^d, for p > -d.

    Uses the scaling identity: the integral over the centred cube of
    side 1 equals the integral over the centred cube of side 1/2
    (which is 2^-(d+p) times itself) plus the integral over the
    remaining shell, where the integrand is bounded and a midpoint rule
    converges.  Hence I = shell / (1 - 2^-(d+p)).
    """
    if p >= 0:
        raise ValueError("use plain quadrature for non-singular exponents")
    if p <= -d:
        raise ValueError(f"|y|^{p} is not integrable in dimension {d}")
    n = int(refine)
    edges = np.linspace(-0.5, 0.5, n + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    grids = np.meshgrid(*([mid] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    inner = np.all(np.abs(pts) < 0.25, axis=1)
    r = np.linalg.norm(pts[~inner], axis=1)
    shell = float(np.sum(r**p)) * (1.0 / n) ** d
    return shell / (1.0 - 2.0 ** (-(d + p)))


def riesz_kernel_matrix(points: np.ndarray, p: float, cell: float) -> np.ndarray:
    """Matrix |x_i - x_j|^p for grid points with cell side ``cell``.

    Entries with |x_i - x_j| < cell/2 (in particular the diagonal) are
    replaced by the cell average of |y|^p, so the matrix is a consistent
    quadrature of the kernel against cell-piecewise-constant densities.
    """
    pts = np.asarray(points, dtype=float)
    d = pts.shape[1]
    diff = pts[:, None, :] - pts[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    near = r < 0.5 * cell
    with np.errstate(divide="ignore"):
        out = np.where(near, 1.0, r) ** p
    out[near] = unit_cube_riesz_mean(p, d) * cell**p
    return out
