"""Effective coagulation kernel via the singular integral equation.

The macroscopic kernel is beta(n, m) = alpha(n, m) * I(a) with
a = alpha(n, m) / (d(n) + d(m)), where I(a) = int V (1 + w^a) dx and
w^a is the correction potential solving

    w^a(x) = -c0 a int |x - y|^{2-d} V(y) (1 + w^a(y)) dy,

equivalently (id + a F) w^a = -a Gamma with F the Newtonian convolution
against V and Gamma = F(1).  Because F integrates against V, the
equation closes on supp V: we solve a dense symmetrizable linear system
on a Cartesian grid of the support and extend everywhere else by one
application of the integral representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .model import InteractionProfile, ModelError
from .riesz import newtonian_constant, riesz_kernel_matrix, unit_cube_riesz_mean

__all__ = [
    "SolverError",
    "SupportGrid",
    "KernelSolver",
    "PotentialSolution",
    "EffectiveKernelTable",
    "gamma_potential",
    "solve_w",
    "dw_da",
    "build_kernel_table",
    "u_epsilon",
]

BOUND_SLACK = 1e-8          # tolerated violation of -1 <= w <= 0
RESIDUAL_TOL = 1e-10        # relative linear-solve residual
DEFAULT_RESOLUTION = 16     # cells across the support diameter
DISCRETIZATION_TOL = 1e-3   # declared accuracy of I(a) at the default grid


class SolverError(RuntimeError):
    """Linear solve failed or produced out-of-bound node values."""


@dataclass(frozen=True)
class SupportGrid:
    """Quadrature nodes covering supp V with singular kernel matrix.

    ``centers`` are cell midpoints inside |x| < C0 where V > 0, ``cell``
    the cell side, ``kernel`` the matrix c0 |x_i - x_j|^{2-d} with
    cell-averaged diagonal, ``V`` the profile values at the nodes.
    """

    centers: np.ndarray
    cell: float
    kernel: np.ndarray
    V: np.ndarray
    dim: int
    c0: float

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.centers), self.cell**self.dim)

    @property
    def covered_volume(self) -> float:
        return len(self.centers) * self.cell**self.dim


def build_support_grid(profile: InteractionProfile,
                       resolution: int = DEFAULT_RESOLUTION) -> SupportGrid:
    """Uniform Cartesian grid of supp V, ``resolution`` cells across."""
    dim, C0 = profile.dim, profile.support_radius
    cell = 2.0 * C0 / resolution
    axis = -C0 + (np.arange(resolution) + 0.5) * cell
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    vals = profile(pts)
    keep = vals > 0.0
    pts, vals = pts[keep], vals[keep]
    if len(pts) == 0:
        raise ModelError("profile vanishes on the whole grid")
    c0 = newtonian_constant(dim)
    kern = c0 * riesz_kernel_matrix(pts, 2.0 - dim, cell)
    return SupportGrid(centers=pts, cell=cell, kernel=kern, V=vals,
                       dim=dim, c0=c0)


@dataclass(frozen=True)
class PotentialSolution:
    """Correction potential w^a on the support grid.

    ``w`` holds node values; evaluation elsewhere goes through the
    integral representation, which reproduces the node values exactly.
    """

    a: float
    grid: SupportGrid
    w: np.ndarray
    residual: float

    def __call__(self, x) -> np.ndarray:
        """Evaluate w^a anywhere via the integral representation."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = self.grid
        pot = _newtonian_sum(g, x, g.V * (1.0 + self.w))
        out = -self.a * pot
        return out if out.shape != (1,) else float(out[0])


def _newtonian_sum(grid: SupportGrid, x: np.ndarray, density: np.ndarray):
    """c0 * sum_j |x - y_j|^{2-d} density_j * cellvol, singular cells averaged."""
    p = 2.0 - grid.dim
    diff = x[:, None, :] - grid.centers[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    near = r < 0.5 * grid.cell
    with np.errstate(divide="ignore"):
        k = np.where(near, 1.0, r) ** p
    if np.any(near):
        k[near] = unit_cube_riesz_mean(p, grid.dim) * grid.cell**p
    return grid.c0 * (k @ density) * grid.cell**grid.dim


class KernelSolver:
    """Shared machinery: support grid plus a cached eigendecomposition.

    The operator F has matrix G_ij = kernel_ij * V_j * cellvol, similar
    to the symmetric S = D^{1/2} K D^{1/2} with D = diag(V * cellvol).
    One eigendecomposition of S serves every coupling a, so tabulating
    I(a) over a long a-grid costs O(n^2) per point.
    """

    def __init__(self, profile: InteractionProfile,
                 resolution: int = DEFAULT_RESOLUTION):
        self.profile = profile
        self.grid = build_support_grid(profile, resolution)
        g = self.grid
        self._sqrt_d = np.sqrt(g.V * g.cell**g.dim)
        self._gamma_nodes = (g.kernel * (g.V * g.cell**g.dim)[None, :]).sum(axis=1)
        self._eig = None

    def _eigsys(self):
        if self._eig is None:
            g = self.grid
            S = self._sqrt_d[:, None] * g.kernel * self._sqrt_d[None, :]
            lam, U = np.linalg.eigh(S)
            self._eig = (lam, U)
        return self._eig

    @property
    def gamma_nodes(self) -> np.ndarray:
        """Gamma = c0 |.|^{2-d} * V at the grid nodes."""
        return self._gamma_nodes

    def gamma(self, x) -> np.ndarray:
        """Newtonian potential of V at arbitrary points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = _newtonian_sum(self.grid, x, self.grid.V)
        return out if out.shape != (1,) else float(out[0])

    def apply_F(self, omega: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.kernel @ (g.V * g.cell**g.dim * omega)

    def _solve_system(self, a: float, rhs: np.ndarray) -> np.ndarray:
        """Solve (id + a F) sol = rhs on the nodes.

        Works in the symmetrized variable D^{1/2} sol (D = diag(V *
        cellvol)), then recovers sol = rhs - a F sol, which avoids
        dividing by the near-zero profile values at boundary nodes.
        """
        lam, U = self._eigsys()
        sd = self._sqrt_d
        y = U.T @ (sd * rhs)
        sym = U @ (y / (1.0 + a * lam))
        return rhs - a * (self.grid.kernel @ (sd * sym))

    def solve_w(self, a: float) -> PotentialSolution:
        """Solve (id + a F) w = -a Gamma; enforce -1 <= w <= 0 at nodes."""
        if a < 0:
            raise ModelError(f"coupling a must be non-negative, got {a}")
        if a == 0.0:
            return PotentialSolution(0.0, self.grid, np.zeros(len(self.grid.V)), 0.0)
        w = self._solve_system(a, -a * self._gamma_nodes)
        rhs = -a * self._gamma_nodes
        res = float(np.max(np.abs(w + a * self.apply_F(w) - rhs)))
        scale = float(np.max(np.abs(rhs)))
        if scale > 0 and res > RESIDUAL_TOL * scale:
            raise SolverError(f"linear solve residual {res:.3e} above tolerance")
        if np.any(w > BOUND_SLACK) or np.any(w < -1.0 - BOUND_SLACK):
            raise SolverError(
                "node values leave [-1, 0] beyond slack: grid too coarse "
                f"(min {w.min():.3e}, max {w.max():.3e})"
            )
        return PotentialSolution(float(a), self.grid, w, res / max(scale, 1.0))

    def dw_da(self, a: float, w: PotentialSolution) -> np.ndarray:
        """Solve (id + a F) v = w / a for the a-derivative of w^a."""
        if a <= 0:
            raise ModelError("dw_da requires a > 0")
        if w.a != a:
            raise ModelError("potential was solved at a different coupling")
        return self._solve_system(a, w.w / a)

    def capture_integral(self, w: PotentialSolution) -> float:
        """I(a) = int V (1 + w^a) dx with the grid measure of V."""
        g = self.grid
        num = float(np.sum(g.V * (1.0 + w.w)))
        return num / float(np.sum(g.V))


@dataclass(frozen=True)
class EffectiveKernelTable:
    """Tabulated capture factor I(a) and the induced kernel beta(n, m)."""

    a_grid: np.ndarray
    I_values: np.ndarray
    alpha: object
    d_fn: object
    _interp: PchipInterpolator

    def capture(self, a) -> np.ndarray:
        """Monotone interpolation of I(a); I(0) = 1."""
        a_in = np.asarray(a, dtype=float)
        scalar = a_in.ndim == 0
        a = np.atleast_1d(a_in)
        if np.any(a < 0):
            raise ModelError("coupling must be non-negative")
        lo, hi = self.a_grid[0], self.a_grid[-1]
        out = np.ones(a.shape)
        pos = a > 0
        if np.any(pos):
            ap = a[pos]
            if np.any(ap > hi * (1 + 1e-12)) or np.any(ap < lo * (1 - 1e-12)):
                raise ModelError(
                    f"coupling outside tabulated range [{lo:g}, {hi:g}]"
                )
            out[pos] = self._interp(np.log(np.clip(ap, lo, hi)))
        return float(out[0]) if scalar else out

    def beta(self, n, m) -> np.ndarray:
        """Effective kernel beta(n, m) = alpha * I(alpha / (d(n) + d(m)))."""
        n = np.asarray(n, dtype=float)
        m = np.asarray(m, dtype=float)
        al = self.alpha(n, m)
        denom = self.d_fn(n) + self.d_fn(m)
        a = np.where(al > 0, al / denom, 0.0)
        return al * self.capture(a)


def build_kernel_table(alpha, d_fn, profile: InteractionProfile,
                       a_min: float = 1e-4, a_max: float = 1e3,
                       points_per_decade: int = 64,
                       solver: KernelSolver | None = None) -> EffectiveKernelTable:
    """Tabulate I(a) on a log-spaced a-grid and wrap beta(n, m).

    The a-grid must cover every coupling induced by the mass pairs the
    table will be queried at; out-of-range queries raise.
    """
    if solver is None:
        solver = KernelSolver(profile)
    decades = np.log10(a_max / a_min)
    npts = max(2, int(np.ceil(decades * points_per_decade)) + 1)
    a_grid = np.geomspace(a_min, a_max, npts)
    I_vals = np.array([solver.capture_integral(solver.solve_w(a)) for a in a_grid])

    if np.any(I_vals <= 0) or np.any(I_vals > 1.0 + BOUND_SLACK):
        raise SolverError("capture factor left (0, 1]")
    if np.any(np.diff(I_vals) >= 0):
        raise SolverError("capture factor failed to be strictly decreasing")
    if np.any(np.diff(a_grid * I_vals) < 0):
        raise SolverError("a * I(a) failed to be non-decreasing")

    interp = PchipInterpolator(np.log(a_grid), I_vals)
    return EffectiveKernelTable(a_grid=a_grid, I_values=I_vals, alpha=alpha,
                                d_fn=d_fn, _interp=interp)


# Functional wrappers mirroring the operation-level API.

def gamma_potential(solver: KernelSolver, x):
    return solver.gamma(x)


def solve_w(a: float, solver: KernelSolver) -> PotentialSolution:
    return solver.solve_w(a)


def dw_da(a: float, solver: KernelSolver, w: PotentialSolution) -> np.ndarray:
    return solver.dw_da(a, w)


def u_epsilon(w: PotentialSolution, x, eps: float):
    """Rescaled correction u_eps(x) = eps^{2-d} w(x / eps)."""
    if eps <= 0:
        raise ModelError("eps must be positive")
    x = np.asarray(x, dtype=float)
    return eps ** (2 - w.grid.dim) * w(x / eps)
