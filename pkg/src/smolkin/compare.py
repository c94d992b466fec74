"""Kinetic-limit comparison: particle runs against the limiting PDE.

For a ladder of decreasing eps, each seed's particle run is mollified at
a fixed macroscopic scale delta and tested against smooth functionals
J(x, n, t); the same functionals are integrated against the sectional
PDE solution started from the same initial density, with the effective
kernel beta built from the same (alpha, d, V).  The report carries the
seed-averaged gaps |int J dg^eps_smoothed - int int J f dx dn| at the
snapshot times and a per-J monotonicity verdict along the eps ladder.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernel import build_kernel_table
from .model import ModelError, sample_initial
from .pde import DensityField, PdeConfig, SpatialMesh, run_pde
from .presets import bump_mollifier, model_from_config
from .sim import SimConfig, simulate

__all__ = [
    "CompareError",
    "GapRow",
    "ComparisonReport",
    "mass_band_J",
    "spatial_bump_J",
    "smoothed_test_integral",
    "pde_test_integral",
    "config_hash",
    "run_compare",
]


class CompareError(RuntimeError):
    """Inconsistent or invalid comparison configuration."""


@dataclass(frozen=True)
class GapRow:
    """Seed-averaged gap for one (epsilon, test function, time) cell."""

    epsilon: float
    seed_count: int
    J_id: str
    t: float
    gap: float
    se: float


@dataclass(frozen=True)
class ComparisonReport:
    """Gaps along the eps ladder with the per-J monotonicity verdict."""

    epsilons: tuple
    seeds: tuple
    delta: float
    rows: tuple
    ladder: dict        # J_id -> time-averaged mean gap per epsilon
    monotone: dict      # J_id -> strictly decreasing along the ladder
    verdict: bool
    model_hash: str

    def __post_init__(self):
        if np.any(np.diff(self.epsilons) >= 0):
            raise CompareError("epsilon ladder must be strictly decreasing")
        if any(r.gap < 0 for r in self.rows):
            raise CompareError("negative gap")


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def mass_band_J(lo: float, hi: float, ramp: float) -> Callable:
    """Smoothed indicator of the mass band [lo, hi], C^1 ramps of width ramp."""
    if not (0 < lo < hi and ramp > 0):
        raise CompareError("need 0 < lo < hi and ramp > 0")

    def J(x, n, t):
        n = np.asarray(n, dtype=float)
        up = _smoothstep((n - (lo - ramp)) / ramp)
        down = 1.0 - _smoothstep((n - hi) / ramp)
        val = up * down
        shape = np.broadcast_shapes(np.shape(x)[:-1], val.shape)
        return np.broadcast_to(val, shape)

    return J


def spatial_bump_J(center: float, radius: float, dim: int) -> Callable:
    """Mass-independent C-infinity bump at distance < radius from center."""
    if radius <= 0:
        raise CompareError("radius must be positive")
    c = np.full(dim, float(center))

    def J(x, n, t):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(((x - c) / radius) ** 2, axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        shape = np.broadcast_shapes(out.shape, np.shape(n))
        return np.broadcast_to(out, shape)

    return J


def _offset_grid(delta: float, dim: int):
    """Mollifier quadrature offsets at spacing delta/4 spanning +-delta."""
    hq = delta / 4.0
    axis = np.arange(-4, 5) * hq
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1), hq


def smoothed_test_integral(state, J: Callable, delta: float,
                           xi: Callable) -> float:
    """int J d(g^eps * xi_delta): the delta-smoothed empirical pairing.

    Equals eps^(d-2) sum over alive particles of (J * xi_delta)(x_i, m_i)
    by a fixed-order quadrature sum, so identical states give identical
    bits.
    """
    dim = state.x.shape[1]
    offsets, hq = _offset_grid(delta, dim)
    wq = np.asarray(xi(offsets / delta), dtype=float) * hq**dim / delta**dim
    alive = state.alive
    xs, ms = state.x[alive], state.m[alive]
    pts = (xs[:, None, :] + offsets[None, :, :]) % state.box      # (N, Q, d)
    vals = np.asarray(J(pts, ms[:, None], state.t), dtype=float)
    return state.epsilon ** (dim - 2) * float(np.sum(vals @ wq))


def pde_test_integral(field: DensityField, J: Callable,
                      space_res: int = 16) -> float:
    """int int J(x, n, t) f(x, n, t) dx dn on the sectional grid.

    A spatially homogeneous field (single-cell mesh) is paired against J
    on an auxiliary uniform spatial grid so spatially structured test
    functions are still integrated accurately.
    """
    grid, mesh = field.grid, field.mesh
    piv, w = grid.pivots, grid.widths
    if mesh.points == 1:
        edge = mesh.box / space_res
        axis = (np.arange(space_res) + 0.5) * edge
        grids = np.meshgrid(*([axis] * mesh.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        cellvol = edge**mesh.dim
    else:
        pts = mesh.centers()
        cellvol = mesh.cell_volume
    total = 0.0
    for j, n in enumerate(piv):
        row = np.broadcast_to(
            np.asarray(J(pts, n, field.t), dtype=float), (len(pts),)
        )
        if mesh.points == 1:
            total += w[j] * float(field.flat[j, 0]) * float(np.sum(row)) * cellvol
        else:
            total += w[j] * float(row @ field.flat[j]) * cellvol
    return total


def config_hash(obj) -> str:
    """Canonical-JSON SHA-256 of a config fragment."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _build_test_functions(specs, dim: int):
    out = []
    for spec in specs:
        spec = dict(spec)
        kind = spec.pop("kind")
        J_id = spec.pop("id", kind)
        if kind == "mass_band":
            J = mass_band_J(float(spec.pop("lo", 0.5)),
                            float(spec.pop("hi", 1.5)),
                            float(spec.pop("ramp", 0.25)))
        elif kind == "spatial_bump":
            J = spatial_bump_J(float(spec.pop("center", 0.5)),
                               float(spec.pop("radius", 0.4)), dim)
        else:
            raise CompareError(f"unknown test function kind {kind!r}")
        if spec:
            raise CompareError(f"unknown keys in test function: {sorted(spec)}")
        out.append((J_id, J))
    if len({j for j, _ in out}) != len(out):
        raise CompareError("duplicate test-function ids")
    return out


def _one_sim(model_cfg: dict, eps: float, seed: int, snapshot_times,
             delta: float, xi, J_list, sim_config: SimConfig):
    """One particle run: smoothed test integrals at each snapshot time."""
    cfg = dict(model_cfg)
    cfg["epsilon"] = eps
    params, h = model_from_config(cfg)
    state = sample_initial(h, params, seed=seed)
    vals = {}
    for t in snapshot_times:
        if t > state.t:
            simulate(state, sim_config, params, t - state.t)
        for J_id, J in J_list:
            vals[(J_id, t)] = smoothed_test_integral(state, J, delta, xi)
    return vals


def run_compare(config: dict) -> ComparisonReport:
    """The eps-ladder comparison of particle runs against the PDE limit.

    ``config`` holds a ``model`` block (base model, epsilon overridden
    along the ladder) and a ``compare`` block with keys ``epsilons``
    (strictly decreasing), ``seeds`` (non-empty), ``delta``,
    ``snapshot_times``, optional ``test_functions``, ``pde``, ``kernel``
    and ``sim`` sub-blocks, optional ``model_hash`` consistency pin, and
    optional ``threads``.
    """
    config = dict(config)
    model_cfg = dict(config.get("model") or {})
    cmp_cfg = dict(config.get("compare") or {})
    if not model_cfg:
        raise CompareError("config is missing the model block")

    mhash = config_hash(model_cfg)
    pinned = cmp_cfg.pop("model_hash", None)
    if pinned is not None and pinned != mhash:
        raise CompareError(
            f"model hash mismatch: config pins {pinned[:12]}..., "
            f"model block hashes to {mhash[:12]}..."
        )

    epsilons = tuple(float(e) for e in cmp_cfg.pop("epsilons"))
    if len(epsilons) < 2 or np.any(np.diff(epsilons) >= 0):
        raise CompareError("epsilon ladder must be strictly decreasing, >= 2 entries")
    seeds = tuple(int(s) for s in cmp_cfg.pop("seeds"))
    if not seeds:
        raise CompareError("seed list must be non-empty")
    delta = float(cmp_cfg.pop("delta"))
    snapshot_times = tuple(float(t) for t in cmp_cfg.pop("snapshot_times"))
    if not snapshot_times:
        raise CompareError("need at least one snapshot time")
    threads = int(cmp_cfg.pop("threads", 1))

    J_specs = cmp_cfg.pop("test_functions", [
        {"id": "mass_band", "kind": "mass_band"},
        {"id": "spatial_bump", "kind": "spatial_bump"},
    ])
    pde_cfg = dict(cmp_cfg.pop("pde", {}))
    kern_cfg = dict(cmp_cfg.pop("kernel", {}))
    sim_cfg = dict(cmp_cfg.pop("sim", {}))
    if cmp_cfg:
        raise CompareError(f"unknown keys in compare config: {sorted(cmp_cfg)}")

    # Shared ingredients: the model at the coarsest eps fixes (alpha, d,
    # V, h); only epsilon varies along the ladder.
    base = dict(model_cfg)
    base["epsilon"] = epsilons[0]
    params0, h = model_from_config(base)
    dim = params0.dim
    J_list = _build_test_functions(J_specs, dim)
    xi = bump_mollifier(dim)
    sim_config = SimConfig(c_delta=float(sim_cfg.pop("c_delta", 0.2)),
                           dt=sim_cfg.pop("dt", None))
    if sim_cfg:
        raise CompareError(f"unknown keys in sim config: {sorted(sim_cfg)}")

    table = build_kernel_table(
        params0.alpha, params0.diffusion, params0.profile,
        a_min=float(kern_cfg.pop("a_min", 1e-2)),
        a_max=float(kern_cfg.pop("a_max", 1e2)),
        points_per_decade=int(kern_cfg.pop("points_per_decade", 16)),
    )
    if kern_cfg:
        raise CompareError(f"unknown keys in kernel config: {sorted(kern_cfg)}")

    pconf = PdeConfig(
        n_min=float(pde_cfg.pop("n_min", 0.5)),
        n_max=float(pde_cfg.pop("n_max", 64.0)),
        bins=int(pde_cfg.pop("bins", 160)),
        mesh_points=int(pde_cfg.pop("mesh_points", 1)),
        dt=float(pde_cfg.pop("dt", 1e-3)),
        horizon=max(snapshot_times),
        snapshot_times=snapshot_times,
    )
    if pde_cfg:
        raise CompareError(f"unknown keys in pde config: {sorted(pde_cfg)}")
    mesh = SpatialMesh(box=params0.box, points=pconf.mesh_points, dim=dim)
    pde = run_pde(h, params0.diffusion, table.beta, pconf, mesh)
    pde_vals = {}
    for t in snapshot_times:
        k = int(np.argmin(np.abs(pde.times - t)))
        for J_id, J in J_list:
            pde_vals[(J_id, t)] = pde_test_integral(pde.snapshots[k], J)

    # Particle runs: one job per (epsilon, seed), collected in fixed order.
    jobs = [(eps, seed) for eps in epsilons for seed in seeds]

    def work(job):
        eps, seed = job
        return _one_sim(model_cfg, eps, seed, snapshot_times, delta, xi,
                        J_list, sim_config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]
    by_eps = {eps: [] for eps in epsilons}
    for (eps, _), res in zip(jobs, results):
        by_eps[eps].append(res)

    rows = []
    ladder = {J_id: [] for J_id, _ in J_list}
    for eps in epsilons:
        per_seed = by_eps[eps]
        means_over_t = {J_id: [] for J_id, _ in J_list}
        for J_id, _ in J_list:
            for t in snapshot_times:
                gaps = np.array([abs(vals[(J_id, t)] - pde_vals[(J_id, t)])
                                 for vals in per_seed])
                se = float(np.std(gaps, ddof=1) / np.sqrt(len(gaps))) \
                    if len(gaps) > 1 else 0.0
                rows.append(GapRow(epsilon=eps, seed_count=len(gaps),
                                   J_id=J_id, t=t,
                                   gap=float(np.mean(gaps)), se=se))
                means_over_t[J_id].append(float(np.mean(gaps)))
            ladder[J_id].append(float(np.mean(means_over_t[J_id])))

    monotone = {J_id: bool(np.all(np.diff(vals) < 0.0))
                for J_id, vals in ladder.items()}
    return ComparisonReport(
        epsilons=epsilons, seeds=seeds, delta=delta, rows=tuple(rows),
        ladder={k: tuple(v) for k, v in ladder.items()},
        monotone=monotone, verdict=all(monotone.values()), model_hash=mhash,
    )
