"""Microscopic model inputs, hypothesis checks, and initial sampling.

The microscopic model is a population of Brownian particles on a
periodic box [0, L)^d whose diffusivity d(m) depends on mass, and which
coagulate at rate eps^-2 V((x_i-x_j)/eps) alpha(m_i, m_j) when within
interaction range.  This module holds the model inputs (diffusivity,
monotone weight phi, propensity alpha, interaction profile V, initial
density h), the numerical checks of the structural hypotheses those
inputs must satisfy, and the sampling of initial particle
configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .riesz import riesz_kernel_matrix, unit_cube_riesz_mean
from .streams import stream

__all__ = [
    "ModelError",
    "DiffusionCoefficient",
    "PhiFunction",
    "CoagulationPropensity",
    "InteractionProfile",
    "InitialDensity",
    "ModelParams",
    "ParticleSystem",
    "HypothesisReport",
    "k_epsilon",
    "epsilon_for_count",
    "construct_phi",
    "check_hypotheses",
    "rho_of_n",
    "sample_initial",
]


class ModelError(ValueError):
    """Invalid model parameters or inconsistent inputs."""


@dataclass(frozen=True)
class DiffusionCoefficient:
    """Mass-dependent diffusivity d(m) > 0 with declared upper bound."""

    fn: Callable[[np.ndarray], np.ndarray]
    bound: float

    def __call__(self, m):
        return np.asarray(self.fn(np.asarray(m, dtype=float)), dtype=float)


@dataclass(frozen=True)
class PhiFunction:
    """Positive weight phi(m) with phi and phi*d non-increasing."""

    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, m):
        return np.asarray(self.fn(np.asarray(m, dtype=float)), dtype=float)


@dataclass(frozen=True)
class CoagulationPropensity:
    """Symmetric coagulation propensity alpha(n, m) >= 0."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    symmetric: bool = True

    def __call__(self, n, m):
        n = np.asarray(n, dtype=float)
        m = np.asarray(m, dtype=float)
        return np.asarray(self.fn(n, m), dtype=float)


@dataclass(frozen=True)
class InteractionProfile:
    """Compactly supported interaction profile V >= 0 with integral 1.

    ``fn`` maps points of shape (..., dim) to values; V vanishes for
    |x| >= support_radius.  ``quadrature_norm`` certifies that the
    numerical integral of V over its support is 1 within 1e-6.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    dim: int
    quadrature_norm: float

    def __post_init__(self):
        if abs(self.quadrature_norm - 1.0) > 1e-6:
            raise ModelError(
                f"interaction profile integrates to {self.quadrature_norm}, "
                "expected 1 within 1e-6"
            )

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.fn(x), dtype=float)


@dataclass(frozen=True)
class InitialDensity:
    """Initial density h_n(x) >= 0 on box x mass.

    ``spatial`` and ``mass`` give the separable factors
    h_n(x) = spatial(x) * mass(n); all presets are separable and the
    sampling / marginal machinery relies on it.  Mass support is
    (mass_min, mass_max].
    """

    spatial: Callable[[np.ndarray], np.ndarray]
    mass: Callable[[np.ndarray], np.ndarray]
    box: float
    dim: int
    mass_min: float
    mass_max: float

    def __call__(self, x, n):
        x = np.asarray(x, dtype=float)
        n = np.asarray(n, dtype=float)
        return np.asarray(self.spatial(x), dtype=float) * np.asarray(
            self.mass(n), dtype=float
        )

    def _space_grid(self, res: int):
        edge = self.box / res
        axis = (np.arange(res) + 0.5) * edge
        grids = np.meshgrid(*([axis] * self.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        return pts, edge**self.dim

    def _mass_grid(self, points: int):
        knots = np.geomspace(self.mass_min, self.mass_max, points)
        mid = np.sqrt(knots[:-1] * knots[1:])
        widths = np.diff(knots)
        return mid, widths

    def spatial_integral(self, res: int = 24) -> float:
        pts, w = self._space_grid(res)
        return float(np.sum(self.spatial(pts))) * w

    def mass_integral(self, points: int = 4096) -> float:
        mid, widths = self._mass_grid(points)
        return float(np.sum(self.mass(mid) * widths))

    def total(self, res: int = 24, mass_points: int = 4096) -> float:
        """Z = integral of h over box x mass."""
        return self.spatial_integral(res) * self.mass_integral(mass_points)

    def hhat(self, x, mass_points: int = 2048) -> np.ndarray:
        """(n+1)-weighted mass integral of h at spatial points x."""
        mid, widths = self._mass_grid(mass_points)
        factor = float(np.sum((mid + 1.0) * self.mass(mid) * widths))
        return np.asarray(self.spatial(x), dtype=float) * factor

    def hbar(self, x, k: int, d_fn, phi_fn, dim: int,
             mass_points: int = 2048) -> np.ndarray:
        """Weighted mass integral entering the k-point correlation bound.

        The weight is n * d(n)^(dim/2 - 1/k) * phi(n)^(dim*k/2 - 1).
        """
        mid, widths = self._mass_grid(mass_points)
        wgt = (
            mid
            * d_fn(mid) ** (dim / 2.0 - 1.0 / k)
            * phi_fn(mid) ** (dim * k / 2.0 - 1.0)
        )
        factor = float(np.sum(wgt * self.mass(mid) * widths))
        return np.asarray(self.spatial(x), dtype=float) * factor


@dataclass(frozen=True)
class ModelParams:
    """All inputs of the microscopic model on a periodic box."""

    dim: int
    diffusion: DiffusionCoefficient
    phi: PhiFunction
    alpha: CoagulationPropensity
    profile: InteractionProfile
    epsilon: float
    Z: float
    box: float
    tau: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.dim < 3 or int(self.dim) != self.dim:
            raise ModelError(f"dimension must be an integer >= 3, got {self.dim}")
        if not 0 < self.epsilon < self.box / (4.0 * self.profile.support_radius):
            raise ModelError(
                f"epsilon={self.epsilon} must lie in (0, box/(4*C0)) = "
                f"(0, {self.box / (4 * self.profile.support_radius)})"
            )
        if self.Z <= 0:
            raise ModelError("Z must be positive")

    @property
    def particle_count(self) -> int:
        return int(round(k_epsilon(self.epsilon, self.dim) * self.Z))

    @property
    def interaction_range(self) -> float:
        return self.profile.support_radius * self.epsilon


@dataclass
class ParticleSystem:
    """Live particle configuration: the only mutable state in the package.

    Arrays cover all particles ever created; ``alive`` masks current
    ones.  ``disp`` accumulates unwrapped displacement (for diffusion
    diagnostics); ``x`` stays wrapped to [0, box)^d.
    """

    ids: np.ndarray
    x: np.ndarray
    m: np.ndarray
    alive: np.ndarray
    t: float
    epsilon: float
    box: float
    seed: int
    step_index: int = 0
    disp: np.ndarray = field(default=None)  # type: ignore[assignment]
    events: list = field(default_factory=list)
    collision_integral: float = 0.0

    def __post_init__(self):
        if self.disp is None:
            self.disp = np.zeros_like(self.x)
        self._check()

    def _check(self):
        if np.any(self.m[self.alive] <= 0):
            raise ModelError("alive particle with non-positive mass")

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.alive))

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.m[self.alive]))

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(
            ids=self.ids.copy(), x=self.x.copy(), m=self.m.copy(),
            alive=self.alive.copy(), t=self.t, epsilon=self.epsilon,
            box=self.box, seed=self.seed, step_index=self.step_index,
            disp=self.disp.copy(), events=list(self.events),
            collision_integral=self.collision_integral,
        )


def k_epsilon(eps: float, d: int) -> float:
    """Particle-number scale factor: eps^(2-d) for d >= 3, |log eps| for d = 2."""
    if not 0 < eps < 1:
        raise ModelError(f"epsilon must lie in (0, 1), got {eps}")
    if d < 2:
        raise ModelError(f"dimension must be >= 2, got {d}")
    if d == 2:
        return abs(np.log(eps))
    return float(eps) ** (2 - d)


def epsilon_for_count(N: int, Z: float, d: int) -> float:
    """Inverse of ``k_epsilon``: the eps with k_eps * Z = N (d >= 3 only)."""
    if d == 2:
        raise ModelError("epsilon inversion is not supported in dimension 2")
    if d < 2:
        raise ModelError(f"dimension must be >= 3, got {d}")
    if not N > Z > 0:
        raise ModelError(f"need N > Z > 0, got N={N}, Z={Z}")
    return float((Z / N) ** (1.0 / (d - 2)))


def construct_phi(d_fn, partition: Sequence[float], A: float = 1.0,
                  check_points: int = 33) -> PhiFunction:
    """Build a weight phi with phi and phi*d non-increasing.

    ``partition`` lists mass points (ascending) between which ``d_fn``
    is monotone.  On stretches where d increases, phi is a constant
    multiple of 1/d (so phi*d is locally constant); where d decreases,
    phi is constant.  The pieces are stitched continuously starting from
    the smallest mass.
    """
    pts = np.asarray(sorted(partition), dtype=float)
    if len(pts) < 2:
        raise ModelError("partition needs at least two points")
    if A <= 0:
        raise ModelError("A must be positive")

    rising = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        s = np.linspace(lo, hi, check_points)
        dv = d_fn(s)
        diffs = np.diff(dv)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(dv))))
        up, down = np.any(diffs > tol), np.any(diffs < -tol)
        if up and down:
            raise ModelError(
                f"d is not monotone on sub-interval [{lo}, {hi}]"
            )
        rising.append(bool(up))

    # Left-endpoint values of phi on each stretch, stitched continuously.
    start = []
    val = A / float(d_fn(pts[0])) if rising[0] else A
    for i, (lo, hi) in enumerate(zip(pts[:-1], pts[1:])):
        start.append(val)
        if rising[i]:
            val = val * float(d_fn(lo)) / float(d_fn(hi))
        # constant on a falling stretch: val unchanged

    lo_all, hi_all = pts[0], pts[-1]

    def phi(m):
        m = np.asarray(m, dtype=float)
        if np.any(m < lo_all - 1e-12) or np.any(m > hi_all + 1e-12):
            raise ModelError("phi evaluated outside its construction range")
        idx = np.clip(np.searchsorted(pts, m, side="right") - 1, 0, len(pts) - 2)
        out = np.empty(np.shape(m))
        flat_m, flat_i, flat_o = np.ravel(m), np.ravel(idx), out.reshape(-1)
        for i in range(len(pts) - 1):
            sel = flat_i == i
            if not np.any(sel):
                continue
            if rising[i]:
                flat_o[sel] = start[i] * float(d_fn(pts[i])) / d_fn(flat_m[sel])
            else:
                flat_o[sel] = start[i]
        return out if out.shape else float(out)

    return PhiFunction(phi)


def rho_of_n(alpha, tau, n: float, epsrel: float = 1e-6) -> float:
    """Entropy-reference convolution rate at mass n.

    rho(n) = int_0^n alpha(m, n-m) tau(m) tau(n-m) / tau(n) dm by
    adaptive quadrature.
    """
    n = float(n)
    if n <= 0:
        return 0.0
    tn = float(tau(np.asarray(n)))
    if tn == 0.0:
        raise ZeroDivisionError(f"tau({n}) = 0 in rho(n)")

    def integrand(m):
        return float(alpha(m, n - m)) * float(tau(np.asarray(m))) * float(
            tau(np.asarray(n - m))
        ) / tn

    val, _ = integrate.quad(integrand, 0.0, n, epsrel=epsrel, limit=200)
    return val


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    estimate: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class HypothesisReport:
    checks: tuple

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "checks": [
                {
                    "name": c.name,
                    "estimate": c.estimate,
                    "threshold": c.threshold,
                    "passed": c.passed,
                    "detail": c.detail,
                }
                for c in self.checks
            ],
        }


def check_hypotheses(params: ModelParams, h: InitialDensity,
                     mass_cap: float = 10.0, mass_points: int = 96,
                     space_res: int = 10,
                     threshold: float = 1e8) -> HypothesisReport:
    """Grid-supremum estimates of the structural hypotheses.

    Finiteness conditions cannot be decided numerically; each check
    reports a grid estimate and compares it against ``threshold``.
    Failures are reported, never raised.
    """
    d, dim = params.diffusion, params.dim
    phi, alpha = params.phi, params.alpha
    checks = []

    # Propensity ratio: sup_{n<=L} sup_m alpha(n,m) / (m d(m)^{d/2} phi(m)^{d-1}).
    n_grid = np.geomspace(h.mass_min, mass_cap, mass_points)
    m_grid = np.geomspace(h.mass_min * 1e-3, h.mass_max, mass_points)
    denom = m_grid * d(m_grid) ** (dim / 2.0) * phi(m_grid) ** (dim - 1.0)
    ratio = alpha(n_grid[:, None], m_grid[None, :]) / denom[None, :]
    est = float(np.max(ratio))
    checks.append(HypothesisCheck(
        "propensity_ratio", est, threshold, est < threshold,
        f"mass cap {mass_cap}, grid {mass_points}x{mass_points}",
    ))

    # Z positivity.
    Z = h.total()
    checks.append(HypothesisCheck(
        "initial_mass_positive", Z, np.inf, Z > 0.0, "Z = total of h"
    ))

    pts, cellvol = h._space_grid(space_res)
    edge = h.box / space_res

    # hbar_k * lambda_k locally bounded, k = 2, 3, 4.
    for k in (2, 3, 4):
        p = 2.0 / k - dim
        hb = h.hbar(pts, k, d, phi, dim)
        kern = riesz_kernel_matrix(pts, p, edge)
        conv = kern @ hb * cellvol
        est = float(np.max(conv)) if Z > 0 else 0.0
        checks.append(HypothesisCheck(
            f"hbar{k}_convolution", est, threshold, est < threshold,
            f"sup over {space_res}^{dim} grid",
        ))

    # Riesz interaction energy of hhat.
    hh = h.hhat(pts)
    kern = riesz_kernel_matrix(pts, 2.0 - dim, edge)
    energy = float(hh @ kern @ hh) * cellvol**2
    checks.append(HypothesisCheck(
        "riesz_energy", energy, threshold, energy < threshold,
        "double quadrature of hhat(x) hhat(y) |x-y|^{2-d}",
    ))

    # Entropy-reference integrability, if tau is declared.
    if params.tau is not None:
        mid, widths = h._mass_grid(mass_points)
        rho_vals = np.array([rho_of_n(alpha, params.tau, n) for n in mid])
        est = float(np.sum(rho_vals * h.mass(mid) * widths)) * h.spatial_integral()
        checks.append(HypothesisCheck(
            "rho_integral", est, threshold, est < threshold,
            "integral of rho(n) h_n over box x mass",
        ))

    return HypothesisReport(tuple(checks))


def _mass_inverse_cdf(h: InitialDensity, knots: int = 4096):
    """Tabulated inverse CDF of the mass marginal of h."""
    grid = np.geomspace(h.mass_min, h.mass_max, knots)
    dens = h.mass(grid)
    if np.any(dens < 0):
        raise ModelError("negative mass density")
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    if cdf[-1] <= 0:
        raise ModelError("initial density is not normalizable (zero mass marginal)")
    cdf /= cdf[-1]
    # Collapse duplicate CDF values so interpolation stays monotone.
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    cdf_k, grid_k = cdf[keep], grid[keep]

    def inv(u):
        return np.interp(u, cdf_k, grid_k)

    def cdf_fn(n):
        return np.interp(n, grid, cdf)

    return inv, cdf_fn


def _spatial_bound(h: InitialDensity, res: int = 48) -> float:
    pts, _ = h._space_grid(res)
    return float(np.max(h.spatial(pts))) * 1.05


def sample_initial(h: InitialDensity, params: ModelParams,
                   mode: str = "deterministic", seed: int = 0) -> ParticleSystem:
    """Sample an initial configuration with N = round(k_eps * Z) particles.

    ``deterministic`` places exactly N i.i.d. samples of h/Z; ``poisson``
    first draws the particle number from Poisson(N).  Masses come from a
    tabulated inverse CDF of the mass marginal; positions from rejection
    sampling against the spatial factor.  Identical seeds reproduce
    identical configurations.
    """
    if mode not in ("deterministic", "poisson"):
        raise ModelError(f"unknown sampling mode {mode!r}")
    N = params.particle_count
    if N < 1:
        raise ModelError(f"k_eps * Z = {N} < 1: no particles to place")
    rng = stream(seed, 0)
    count = int(rng.poisson(N)) if mode == "poisson" else N

    inv_cdf, _ = _mass_inverse_cdf(h)
    masses = inv_cdf(rng.random(count))

    bound = _spatial_bound(h)
    if bound <= 0:
        raise ModelError("initial density vanishes identically in space")
    pos = np.empty((count, params.dim))
    filled = 0
    while filled < count:
        want = count - filled
        cand = rng.random((max(2 * want, 64), params.dim)) * h.box
        acc = rng.random(len(cand)) * bound < h.spatial(cand)
        took = cand[acc][:want]
        pos[filled:filled + len(took)] = took
        filled += len(took)

    return ParticleSystem(
        ids=np.arange(count, dtype=np.int64),
        x=pos,
        m=np.asarray(masses, dtype=float),
        alive=np.ones(count, dtype=bool),
        t=0.0,
        epsilon=params.epsilon,
        box=params.box,
        seed=int(seed),
    )
