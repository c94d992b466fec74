"""Sectional solver for the diffusion--coagulation system.

Mass is discretized on a geometric pivot grid with fixed-pivot
redistribution: a coagulation product falling between two pivots is
split between them with number fractions chosen so discrete mass is
conserved exactly.  Products beyond the top pivot are removed and their
mass accumulated as an explicit truncation flux.  Diffusion is exact
per Fourier mode on a uniform periodic mesh, so the only time-step
restriction comes from the coagulation terms.

Kernel convention: the loss integral carries a factor 2 and the gain
sum runs over ordered pivot pairs, so that with a constant kernel B the
number density obeys M0' = -B M0^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .model import ModelError

__all__ = [
    "StabilityError",
    "MassGrid",
    "SpatialMesh",
    "DensityField",
    "WeakTestFunction",
    "PairTable",
    "diffusion_step",
    "coagulation_rhs",
    "step",
    "exact_constant_kernel",
    "weak_residual",
    "entropy",
    "PdeConfig",
    "run_pde",
]

NEGATIVITY_TOL = 1e-14


class StabilityError(RuntimeError):
    """Time step too large: the coagulation update went negative."""


@dataclass(frozen=True)
class MassGrid:
    """Geometric pivots n_j = n_min * r^j with geometric-mean bin edges.

    The first bin is open-ended at zero (its lower edge is 0, not
    n_min / sqrt(r)) so that projecting an initial density onto the grid
    does not silently discard the number of particles below n_min.
    """

    pivots: np.ndarray
    edges: np.ndarray
    widths: np.ndarray
    n_max: float

    @classmethod
    def geometric(cls, n_min: float, n_max: float, bins: int) -> "MassGrid":
        if not 0 < n_min < n_max or bins < 2:
            raise ModelError("need 0 < n_min < n_max and at least 2 bins")
        pivots = np.geomspace(n_min, n_max, bins)
        r = (n_max / n_min) ** (1.0 / (bins - 1))
        edges = np.empty(bins + 1)
        edges[0] = 0.0
        edges[1:-1] = np.sqrt(pivots[:-1] * pivots[1:])
        edges[-1] = n_max * np.sqrt(r)
        return cls(pivots=pivots, edges=edges, widths=np.diff(edges),
                   n_max=float(n_max))

    @property
    def bins(self) -> int:
        return len(self.pivots)


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform periodic mesh with M points per side (M a power of two)."""

    box: float
    points: int
    dim: int

    def __post_init__(self):
        if self.points & (self.points - 1):
            raise ModelError(f"mesh points per side must be a power of two, "
                             f"got {self.points}")

    @property
    def spacing(self) -> float:
        return self.box / self.points

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def cells(self) -> int:
        return self.points**self.dim

    def centers(self) -> np.ndarray:
        axis = (np.arange(self.points) + 0.5) * self.spacing
        grids = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def k_squared(self) -> np.ndarray:
        k = 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)
        grids = np.meshgrid(*([k] * self.dim), indexing="ij")
        return sum(g**2 for g in grids)


@dataclass
class DensityField:
    """Density f[j, cell...] (number per unit mass per unit volume)."""

    grid: MassGrid
    mesh: SpatialMesh
    values: np.ndarray  # shape (bins, points, ..., points)
    t: float = 0.0
    truncation_mass: float = 0.0  # mass per volume lost past n_max so far

    @classmethod
    def from_density(cls, h, grid: MassGrid, mesh: SpatialMesh,
                     quad_order: int = 8) -> "DensityField":
        """Project h(x, n) onto the grid by exact per-bin mass integrals.

        Bin contents are Gauss-Legendre integrals of h over each mass
        bin, so the discrete number and mass agree with the continuous
        ones to quadrature accuracy (the first bin reaches down to 0).
        """
        pts = mesh.centers()
        nodes, wts = np.polynomial.legendre.leggauss(quad_order)
        vals = np.empty((grid.bins, mesh.cells))
        for j in range(grid.bins):
            a, b = grid.edges[j], grid.edges[j + 1]
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            acc = np.zeros(mesh.cells)
            for q, wq in zip(nodes, wts):
                acc += wq * h(pts, mid + half * q)
            vals[j] = acc * half / grid.widths[j]
        shape = (grid.bins,) + (mesh.points,) * mesh.dim
        return cls(grid=grid, mesh=mesh, values=vals.reshape(shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(self.grid.bins, -1)

    def number_density(self) -> np.ndarray:
        """M0 per cell: integral of f over mass."""
        return np.tensordot(self.grid.widths, self.values, axes=(0, 0))

    def total_number(self) -> float:
        return float(np.sum(self.number_density())) * self.mesh.cell_volume

    def total_mass(self) -> float:
        w = self.grid.pivots * self.grid.widths
        return float(np.sum(np.tensordot(w, self.values, axes=(0, 0)))) \
            * self.mesh.cell_volume

    def moment(self, r: float) -> float:
        w = self.grid.pivots**r * self.grid.widths
        return float(np.sum(np.tensordot(w, self.values, axes=(0, 0)))) \
            * self.mesh.cell_volume

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.mesh, self.values.copy(), self.t,
                            self.truncation_mass)


def diffusion_step(f: DensityField, dt: float, d_fn) -> DensityField:
    """Exact spectral heat propagation, one factor exp(-d(n) |k|^2 dt) per bin."""
    mesh = f.mesh
    if mesh.points == 1:
        return f.copy()
    k2 = mesh.k_squared()
    axes = tuple(range(1, mesh.dim + 1))
    spec = np.fft.fftn(f.values, axes=axes)
    damp = np.exp(-np.asarray(d_fn(f.grid.pivots))[(...,) + (None,) * mesh.dim]
                  * k2[None] * dt)
    out = np.fft.ifftn(spec * damp, axes=axes).real
    return DensityField(f.grid, mesh, out, f.t, f.truncation_mass)


class PairTable:
    """Precomputed fixed-pivot redistribution for a mass grid and kernel."""

    def __init__(self, grid: MassGrid, beta: Callable):
        self.grid = grid
        piv = grid.pivots
        J = grid.bins
        iu, ju = np.triu_indices(J)
        mult = np.where(iu == ju, 1.0, 2.0)   # ordered-pair multiplicity
        v = piv[iu] + piv[ju]
        hi = np.searchsorted(piv, v, side="left")
        over = hi >= J
        lo = np.clip(hi - 1, 0, J - 2)
        hi_c = lo + 1
        span = piv[hi_c] - piv[lo]
        frac_hi = np.where(over, 0.0, np.clip((v - piv[lo]) / span, 0.0, 1.0))
        frac_lo = np.where(over, 0.0, 1.0 - frac_hi)
        self.iu, self.ju, self.mult = iu, ju, mult
        self.lo, self.hi = lo, hi_c
        self.frac_lo, self.frac_hi = frac_lo, frac_hi
        self.over = over
        self.pair_sum = v
        self.beta_pairs = np.asarray(beta(piv[iu], piv[ju]), dtype=float)
        self.beta_matrix = np.asarray(
            beta(piv[:, None], piv[None, :]), dtype=float
        )
        if np.any(self.beta_pairs < 0):
            raise ModelError("negative kernel values")
        # Sparse scatter matrix: gain_N = gain_matrix @ pair_rates.
        P = len(iu)
        rows = np.concatenate([lo, hi_c])
        cols = np.concatenate([np.arange(P), np.arange(P)])
        data = np.concatenate([frac_lo, frac_hi])
        self.gain_matrix = sparse.csr_matrix(
            (data, (rows, cols)), shape=(J, P)
        )
        self.over_mass = np.where(over, v, 0.0)
        self.pair_coef = mult * self.beta_pairs

    @property
    def beta_max(self) -> float:
        return float(np.max(self.beta_matrix))


def coagulation_rhs(f: DensityField, pairs: PairTable):
    """Sectional coagulation rate: returns (df/dt, truncation mass flux rate).

    The loss term is -2 f_n int beta f_m dm; the gain sum over ordered
    pivot pairs splits each product between its bracketing pivots with
    mass-conserving fractions.  The flux rate is mass per unit volume
    per unit time leaving past the top pivot, integrated over the box.
    """
    grid, mesh = f.grid, f.mesh
    w = grid.widths
    flat = f.flat
    if flat.shape[1] == 1:                       # homogeneous fast path
        N = flat[:, 0] * w
        loss_N = -2.0 * N * (pairs.beta_matrix @ N)
        rate = pairs.pair_coef * N[pairs.iu] * N[pairs.ju]
        gain_N = pairs.gain_matrix @ rate
        flux = float(pairs.over_mass @ rate)
        dfdt = ((loss_N + gain_N) / w)[:, None]
    else:
        N = flat * w[:, None]                    # bin number densities per cell
        loss_N = -2.0 * N * (pairs.beta_matrix @ N)
        rate = pairs.pair_coef[:, None] * N[pairs.iu] * N[pairs.ju]
        gain_N = pairs.gain_matrix @ rate
        flux = float(pairs.over_mass @ np.sum(rate, axis=1))
        dfdt = (loss_N + gain_N) / w[:, None]
    return dfdt.reshape(f.values.shape), flux * mesh.cell_volume


def step(f: DensityField, dt: float, pairs: PairTable, d_fn) -> DensityField:
    """Strang step: half diffusion, SSP-RK2 coagulation, half diffusion."""
    out = diffusion_step(f, 0.5 * dt, d_fn)
    r1, fl1 = coagulation_rhs(out, pairs)
    mid = DensityField(out.grid, out.mesh, out.values + dt * r1, out.t,
                       out.truncation_mass)
    r2, fl2 = coagulation_rhs(mid, pairs)
    vals = out.values + 0.5 * dt * (r1 + r2)
    flux = out.truncation_mass + 0.5 * dt * (fl1 + fl2)
    floor = -NEGATIVITY_TOL * max(float(np.max(np.abs(vals))), 1.0)
    if np.any(vals < floor):
        raise StabilityError(
            f"negative density {float(np.min(vals)):.3e}: reduce dt"
        )
    np.clip(vals, 0.0, None, out=vals)
    out = DensityField(out.grid, out.mesh, vals, out.t, flux)
    out = diffusion_step(out, 0.5 * dt, d_fn)
    out.t = f.t + dt
    return out


def exact_constant_kernel(n, t: float, B: float = 1.0):
    """Homogeneous constant-kernel solution with f(n, 0) = exp(-n).

    f(n, t) = (1 + B t)^-2 exp(-n / (1 + B t)); its number density is
    1/(1 + B t) and its mass integral is 1 for all t.
    """
    if B <= 0 or t < 0:
        raise ModelError("need B > 0 and t >= 0")
    s = 1.0 + B * t
    return np.exp(-np.asarray(n, dtype=float) / s) / s**2


@dataclass(frozen=True)
class WeakTestFunction:
    """Smooth test function J(x, n, t) with finite-difference derivatives."""

    fn: Callable
    dx: float = 1e-3
    dt: float = 1e-4

    def __call__(self, x, n, t):
        return np.asarray(self.fn(np.asarray(x, dtype=float), n, t), dtype=float)

    def time_derivative(self, x, n, t):
        return (self(x, n, t + self.dt) - self(x, n, t - self.dt)) / (2 * self.dt)

    def laplacian(self, x, n, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape[:-1], np.shape(n)))
        for ax in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[ax] = self.dx
            out = out + (self(x + e, n, t) - 2.0 * self(x, n, t)
                         + self(x - e, n, t)) / self.dx**2
        return out

    def tilde(self, x, m, n, t):
        """J(x, m+n, t) - J(x, m, t) - J(x, n, t)."""
        return self(x, m + n, t) - self(x, m, t) - self(x, n, t)


def weak_residual(trajectory: Sequence[DensityField], J: WeakTestFunction,
                  h, beta: Callable, d_fn) -> float:
    """Residual LHS - RHS of the weak formulation over a trajectory.

    ``h`` is the initial density evaluator h(x, n); pass None to use the
    first field of the trajectory.  Time integrals use the trapezoid
    rule over the snapshot times.
    """
    if len(trajectory) < 2:
        raise ModelError("need at least two snapshots")
    f0, fT = trajectory[0], trajectory[-1]
    grid, mesh = f0.grid, f0.mesh
    pts = mesh.centers()
    cellvol = mesh.cell_volume
    piv, w = grid.pivots, grid.widths
    times = np.array([f.t for f in trajectory])

    def mass_space_sum(values2d, arr):
        # values2d: (bins, cells) weights array from J-type evaluations
        return float(np.sum(values2d * arr)) * cellvol

    def eval_on(fun, t):
        # (bins, cells) array of fun(x_c, n_j, t); J may ignore x and
        # return scalars, so broadcast each row explicitly
        rows = [np.broadcast_to(np.asarray(fun(pts, n, t), dtype=float),
                                (len(pts),)) for n in piv]
        return np.stack(rows) * w[:, None]

    lhs = mass_space_sum(eval_on(J, fT.t), fT.flat)

    if h is None:
        h_vals = f0.flat
    else:
        h_vals = np.stack([h(pts, n) for n in piv])
    rhs = mass_space_sum(eval_on(J, times[0]), h_vals)

    dt_terms, diff_terms, coag_terms = [], [], []
    b_mat = np.asarray(beta(piv[:, None], piv[None, :]), dtype=float)
    for f in trajectory:
        t = f.t
        dt_terms.append(mass_space_sum(eval_on(J.time_derivative, t), f.flat))
        lap = np.stack([d_fn(n) * J.laplacian(pts, n, t) for n in piv]) \
            * w[:, None]
        diff_terms.append(float(np.sum(lap * f.flat)) * cellvol)
        # Pairwise coagulation term per cell.
        N = f.flat * w[:, None]                       # (bins, cells)
        tot = 0.0
        for c in range(N.shape[1]):
            x = pts[c]
            jt = J.tilde(x[None, :], piv[:, None], piv[None, :], t)
            tot += float(np.sum(b_mat * jt * np.outer(N[:, c], N[:, c])))
        coag_terms.append(tot * cellvol)

    rhs += np.trapezoid(dt_terms, times)
    rhs += np.trapezoid(diff_terms, times)
    rhs += np.trapezoid(coag_terms, times)
    return lhs - rhs


def _psi(u: np.ndarray) -> np.ndarray:
    """psi(u) = u log u - u + 1 with psi(0) = 1."""
    out = np.ones_like(u)
    pos = u > 0
    out[pos] = u[pos] * np.log(u[pos]) - u[pos] + 1.0
    return out


def entropy(f: DensityField, tau) -> float:
    """Relative entropy of f against the Gaussian x tau reference.

    The reference r(x, n) is the standard Gaussian centred at the box
    centre (renormalized over the box) times tau(n); returns the
    quadrature of psi(f / r) r over box x mass grid.
    """
    mesh, grid = f.mesh, f.grid
    pts = mesh.centers()
    centre = np.full(mesh.dim, mesh.box / 2.0)
    g = np.exp(-0.5 * np.sum((pts - centre) ** 2, axis=-1))
    g /= np.sum(g) * mesh.cell_volume
    tau_vals = np.asarray(tau(grid.pivots), dtype=float)
    r = tau_vals[:, None] * g[None, :]
    ratio = np.where(r > 0, f.flat / np.where(r > 0, r, 1.0), 0.0)
    integrand = _psi(ratio) * r
    return float(np.sum(integrand * grid.widths[:, None])) * mesh.cell_volume


@dataclass
class PdeConfig:
    """Discretization block for the PDE solver."""

    n_min: float = 1e-2
    n_max: float = 50.0
    bins: int = 400
    mesh_points: int = 32
    dt: float = 1e-3
    horizon: float = 1.0
    snapshot_times: tuple = ()

    def mass_grid(self) -> MassGrid:
        return MassGrid.geometric(self.n_min, self.n_max, self.bins)


@dataclass
class PdeResult:
    snapshots: list
    times: np.ndarray
    number: np.ndarray
    mass: np.ndarray
    flux: np.ndarray
    entropy: np.ndarray | None = None


def run_pde(h, d_fn, beta, config: PdeConfig, mesh: SpatialMesh,
            tau=None) -> PdeResult:
    """Integrate the system from h to the horizon, recording snapshots.

    Snapshot times are rounded to step boundaries.  Moments (number,
    mass, accumulated truncation flux, optional entropy) are recorded at
    every snapshot.
    """
    grid = config.mass_grid()
    pairs = PairTable(grid, beta)
    f = DensityField.from_density(h, grid, mesh)
    steps = int(round(config.horizon / config.dt))
    snap_steps = sorted({int(round(t / config.dt)) for t in config.snapshot_times}
                        | {0, steps})
    limit = 0.25 / max(pairs.beta_max * float(np.max(f.number_density())), 1e-300)
    if config.dt > limit:
        raise StabilityError(
            f"dt={config.dt} exceeds coagulation stability bound {limit:.3e}"
        )

    snaps, times, number, mass, flux, ent = [], [], [], [], [], []

    def record(fld):
        snaps.append(fld.copy())
        times.append(fld.t)
        number.append(fld.moment(0.0))
        mass.append(fld.total_mass())
        flux.append(fld.truncation_mass)
        if tau is not None:
            ent.append(entropy(fld, tau))

    record(f)
    for k in range(1, steps + 1):
        f = step(f, config.dt, pairs, d_fn)
        if k in snap_steps:
            record(f)
    return PdeResult(
        snapshots=snaps, times=np.array(times), number=np.array(number),
        mass=np.array(mass), flux=np.array(flux),
        entropy=np.array(ent) if tau is not None else None,
    )
