"""Scaling algebra for power-law coefficients d(n) = n^-phi, beta = n^eta + m^eta.

Critical exponents of the self-similar rescaling

    g_n(x, t) = lambda^alpha f_{n lambda^gamma}(lambda^tau x, lambda t)

together with the three linear conditions (free motion, interaction,
mass) they must satisfy, the tau = 0 blow-up branch, and a numeric
rescaling map for density trajectories.  The heavy-mass classification
is "scaling permits" only: the algebra is a heuristic, not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError
from .pde import DensityField, weak_residual

__all__ = [
    "ScalingError",
    "ScalingInput",
    "CriticalExponents",
    "ConditionReport",
    "critical_exponents",
    "check_scaling_conditions",
    "mass_exponent",
    "blowup_exponents",
    "rescale_field",
]

CONDITION_TOL = 1e-12


class ScalingError(ValueError):
    """Singular or invalid scaling input."""


@dataclass(frozen=True)
class ScalingInput:
    """Power-law exponents: d(n) = n^-phi, beta(n, m) = n^eta + m^eta."""

    phi: float
    eta: float
    dim: int = 3

    def __post_init__(self):
        if not (np.isfinite(self.phi) and np.isfinite(self.eta)):
            raise ScalingError("phi and eta must be finite")
        if self.phi < 0 or self.eta < 0:
            raise ScalingError("phi and eta must be nonnegative")
        if self.dim < 2:
            raise ScalingError("dimension must be at least 2")


@dataclass(frozen=True)
class CriticalExponents:
    gamma: float
    alpha: float
    tau: float
    critical: bool

    def as_tuple(self):
        return (self.gamma, self.alpha, self.tau)


def critical_exponents(inp: ScalingInput) -> CriticalExponents:
    """Exponents making the rescaling preserve all three structures.

    For d >= 3:

        gamma = (d/2 - 1) / (eta + phi d/2 - 1)
        alpha = (d/2 (phi + eta + 1) - 2) / (eta + phi d/2 - 1)
        tau   = (eta + phi - 1) / (2 (eta + phi d/2 - 1))

    For d = 2 the numerators all degenerate and (0, 1, 1/2) is adopted
    regardless of (phi, eta).
    """
    d = inp.dim
    if d == 2:
        return CriticalExponents(gamma=0.0, alpha=1.0, tau=0.5, critical=True)
    den = inp.eta + inp.phi * d / 2.0 - 1.0
    if abs(den) < 1e-14:
        raise ScalingError(
            f"singular scaling: eta + phi d/2 = 1 at phi={inp.phi}, eta={inp.eta}"
        )
    gamma = (d / 2.0 - 1.0) / den
    alpha = (d / 2.0 * (inp.phi + inp.eta + 1.0) - 2.0) / den
    tau = (inp.eta + inp.phi - 1.0) / (2.0 * den)
    return CriticalExponents(gamma=gamma, alpha=alpha, tau=tau, critical=True)


@dataclass(frozen=True)
class ConditionReport:
    """Residuals of the three linear scaling conditions."""

    free_motion: float       # 1 - gamma phi - 2 tau
    interaction: float       # -alpha + gamma (1 + eta) + 1
    mass: float              # alpha - tau d - 2 gamma

    def booleans(self, tol: float = CONDITION_TOL):
        return (abs(self.free_motion) <= tol,
                abs(self.interaction) <= tol,
                abs(self.mass) <= tol)

    def all_satisfied(self, tol: float = CONDITION_TOL) -> bool:
        return all(self.booleans(tol))


def check_scaling_conditions(alpha: float, gamma: float, tau: float,
                             inp: ScalingInput) -> ConditionReport:
    """Residuals of the free-motion, interaction and mass conditions."""
    return ConditionReport(
        free_motion=1.0 - gamma * inp.phi - 2.0 * tau,
        interaction=-alpha + gamma * (1.0 + inp.eta) + 1.0,
        mass=alpha - tau * inp.dim - 2.0 * gamma,
    )


def mass_exponent(alpha: float, gamma: float, tau: float, dim: int) -> float:
    """Exponent of the total-mass rescaling: alpha - tau d - 2 gamma."""
    return alpha - tau * dim - 2.0 * gamma


def blowup_exponents(phi: float, eta: float):
    """tau = 0 branch: gamma = 1/phi, alpha = 1 + (1 + eta)/phi.

    Returns (gamma, alpha, regime) where regime is
    "scaling-permits-heavy-mass" iff alpha - 2 gamma >= 0, which is
    algebraically equivalent to phi + eta >= 1, and "mass-conserving"
    otherwise.
    """
    if phi <= 0:
        raise ScalingError("blow-up branch requires phi > 0")
    gamma = 1.0 / phi
    alpha = 1.0 + (1.0 + eta) / phi
    heavy = alpha - 2.0 * gamma >= 0.0
    regime = "scaling-permits-heavy-mass" if heavy else "mass-conserving"
    return gamma, alpha, regime


def _periodic_linear(values: np.ndarray, coords: np.ndarray, box: float):
    """d-linear periodic interpolation on a uniform cell-centred grid.

    ``values`` has shape (M,)*d, ``coords`` shape (..., d); grid nodes
    sit at (i + 1/2) * box / M.
    """
    M = values.shape[0]
    dim = values.ndim
    h = box / M
    u = coords / h - 0.5
    i0 = np.floor(u).astype(int)
    frac = u - i0
    out = np.zeros(coords.shape[:-1])
    for corner in range(2**dim):
        idx, weight = [], np.ones(coords.shape[:-1])
        for ax in range(dim):
            bit = (corner >> ax) & 1
            idx.append((i0[..., ax] + bit) % M)
            weight = weight * np.where(bit, frac[..., ax], 1.0 - frac[..., ax])
        out += weight * values[tuple(idx)]
    return out


def rescale_field(trajectory, lam: float, gamma: float, alpha: float,
                  tau: float, escape_tol: float = 1e-6):
    """Apply g_n(x, t) = lam^alpha f_{n lam^gamma}(lam^tau x, lam t).

    Each field in the trajectory is resampled onto its own grid at the
    rescaled mass and space coordinates (log-linear in mass, d-linear
    periodic in space); the returned fields carry times t / lam.  Raises
    if a non-negligible mass fraction of the source lies beyond the
    reachable mass range (support escape).
    """
    if lam <= 0:
        raise ScalingError("lambda must be positive")
    out = []
    for f in trajectory:
        grid, mesh = f.grid, f.mesh
        src_mass = grid.pivots * lam**gamma
        top = grid.edges[-1]
        if lam**gamma > 1.0:
            # Source bins beyond the highest queried mass are unreachable.
            lost = [j for j, n in enumerate(grid.pivots) if n > top / lam**gamma]
            if lost:
                frac = float(np.sum(np.abs(f.flat[lost])
                                    * (grid.pivots * grid.widths)[lost, None]))
                total = f.total_mass() / mesh.cell_volume
                if total > 0 and frac / total > escape_tol:
                    raise ScalingError(
                        f"rescaled support escapes the mass grid "
                        f"(lost fraction {frac / total:.2e})"
                    )
        logp = np.log(grid.pivots)
        vals = np.empty_like(f.values)
        for j, s in enumerate(src_mass):
            # log-linear interpolation in mass, zero outside the grid
            if s < grid.pivots[0] or s > grid.pivots[-1]:
                slab = np.zeros(f.values.shape[1:])
            else:
                k = min(np.searchsorted(logp, np.log(s)) - 1, grid.bins - 2)
                k = max(k, 0)
                t = (np.log(s) - logp[k]) / (logp[k + 1] - logp[k])
                slab = (1.0 - t) * f.values[k] + t * f.values[k + 1]
            if mesh.points > 1 and tau != 0.0:
                pts = (mesh.centers() * lam**tau) % mesh.box
                slab = _periodic_linear(slab, pts, mesh.box).reshape(slab.shape)
            vals[j] = slab
        out.append(DensityField(grid, mesh, lam**alpha * vals, f.t / lam,
                                f.truncation_mass))
    return out


def rescaled_residual(trajectory, lam, gamma, alpha, tau, J, beta, d_fn,
                      escape_tol: float = 1e-6):
    """weak_residual of the rescaled trajectory against the same PDE."""
    resc = rescale_field(trajectory, lam, gamma, alpha, tau, escape_tol)
    return weak_residual(resc, J, None, beta, d_fn), resc
