"""Command-line harness: config ingestion and experiment orchestration.

Subcommands: ``check``, ``kernel``, ``sim``, ``pde``, ``scaling``,
``compare``.  Configs are versioned JSON (unknown keys rejected by the
block parsers); all outputs go through the deterministic writers in
``report``, so identical (config, seeds) reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import compare as compare_mod
from . import report
from .kernel import build_kernel_table
from .model import check_hypotheses, sample_initial
from .pde import PdeConfig, SpatialMesh, WeakTestFunction, run_pde, weak_residual
from .presets import model_from_config
from .scaling import (ScalingInput, blowup_exponents, check_scaling_conditions,
                      critical_exponents)
from .sim import SimConfig, empirical_measure, mass_moments, simulate

__all__ = ["main"]


def _load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _parse_seeds(args) -> list:
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.split(",") if s.strip()]
    if getattr(args, "seed", None) is not None:
        return [int(args.seed)]
    return [0]


def _parse_times(spec: str) -> tuple:
    return tuple(float(t) for t in spec.split(",") if t.strip())


def _cmd_check(args) -> int:
    cfg = _load_config(args.config)
    params, h = model_from_config(cfg.get("model", cfg))
    rep = check_hypotheses(params, h)
    report.emit_check(rep, args.out)
    print(f"hypotheses: {'all passed' if rep.all_passed else 'FAILURES'} "
          f"({sum(c.passed for c in rep.checks)}/{len(rep.checks)})")
    return 0 if rep.all_passed else 1


def _cmd_kernel(args) -> int:
    cfg = _load_config(args.config)
    params, h = model_from_config(cfg.get("model", cfg))
    a_min, a_max, ppd = 1e-4, 1e3, 64
    if args.a_grid:
        lo, hi, p = args.a_grid.split(":")
        a_min, a_max, ppd = float(lo), float(hi), int(p)
    table = build_kernel_table(params.alpha, params.diffusion, params.profile,
                               a_min=a_min, a_max=a_max, points_per_decade=ppd)
    masses = np.geomspace(h.mass_min, h.mass_max, 20)
    files = report.emit_kernel(table, masses, args.out)
    print(f"kernel table over a in [{a_min:g}, {a_max:g}] -> "
          f"{', '.join(str(f) for f in files)}")
    return 0


def _cmd_sim(args) -> int:
    cfg = _load_config(args.config)
    params, h = model_from_config(cfg["model"])
    sim_cfg = dict(cfg.get("sim", {}))
    horizon = float(sim_cfg.pop("horizon", 1.0))
    config = SimConfig(c_delta=float(sim_cfg.pop("c_delta", 0.2)),
                       dt=sim_cfg.pop("dt", None))
    if sim_cfg:
        raise SystemExit(f"unknown keys in sim config: {sorted(sim_cfg)}")
    snap_times = _parse_times(args.snapshots) if args.snapshots else (horizon,)

    states, snapshots, moments = [], [], []
    for seed in _parse_seeds(args):
        state = sample_initial(h, params, seed=seed)
        for t in sorted(snap_times):
            if t > state.t:
                simulate(state, config, params, t - state.t)
            snapshots.append((seed, empirical_measure(state, params.dim)))
            count, mass, m2, heavy = mass_moments(state, 2.0, 1.0, params.dim)
            moments.append((seed, state.t, count, mass, m2, heavy))
        states.append(state)
    files = report.emit_sim(states, snapshots, moments, args.out)
    print(f"{len(states)} seed(s), "
          f"{sum(len(s.events) for s in states)} coagulations -> "
          f"{', '.join(str(f) for f in files)}")
    return 0


def _cmd_pde(args) -> int:
    cfg = _load_config(args.config)
    params, h = model_from_config(cfg["model"])
    blk = dict(cfg.get("pde", {}))
    pconf = PdeConfig(
        n_min=float(blk.pop("n_min", 1e-2)),
        n_max=float(blk.pop("n_max", 50.0)),
        bins=int(blk.pop("bins", 400)),
        mesh_points=int(blk.pop("mesh_points", 8)),
        dt=float(blk.pop("dt", 1e-3)),
        horizon=float(blk.pop("horizon", 1.0)),
        snapshot_times=tuple(blk.pop("snapshot_times", ())),
    )
    kern = dict(blk.pop("kernel", {}))
    if blk:
        raise SystemExit(f"unknown keys in pde config: {sorted(blk)}")
    table = build_kernel_table(
        params.alpha, params.diffusion, params.profile,
        a_min=float(kern.pop("a_min", 1e-2)),
        a_max=float(kern.pop("a_max", 1e2)),
        points_per_decade=int(kern.pop("points_per_decade", 16)),
    )
    mesh = SpatialMesh(box=params.box, points=pconf.mesh_points, dim=params.dim)
    result = run_pde(h, params.diffusion, table.beta, pconf, mesh,
                     tau=params.tau)

    J_mass = WeakTestFunction(lambda x, n, t: np.asarray(n, float)
                              * np.ones(np.shape(x)[:-1]))
    res = weak_residual(result.snapshots, J_mass, None, table.beta,
                        params.diffusion)
    drift = (result.mass[-1] + result.flux[-1]) - (result.mass[0] + result.flux[0])
    residual = {"J": "mass", "weak_residual": res, "mass_plus_flux_drift": drift}
    files = report.emit_pde(result, args.out, residual=residual)
    print(f"pde to t={pconf.horizon:g}: mass drift {drift:.3e}, "
          f"weak residual {res:.3e} -> {', '.join(str(f) for f in files)}")
    return 0


def _cmd_scaling(args) -> int:
    inp = ScalingInput(phi=args.phi, eta=args.eta, dim=args.dim)
    if args.blowup:
        gamma, alpha, regime = blowup_exponents(args.phi, args.eta)
        tau = 0.0
    else:
        ce = critical_exponents(inp)
        gamma, alpha, tau = ce.as_tuple()
        regime = "critical"
    rep = check_scaling_conditions(alpha, gamma, tau, inp)
    payload = {
        "phi": args.phi, "eta": args.eta, "dim": args.dim,
        "gamma": gamma, "alpha": alpha, "tau": tau,
        "conditions": {
            "free_motion": rep.free_motion,
            "interaction": rep.interaction,
            "mass": rep.mass,
            "satisfied": list(rep.booleans()),
        },
        "regime": regime,
    }
    if args.out:
        report.emit_scaling(payload, args.out)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    if args.seeds or args.seed is not None:
        cfg.setdefault("compare", {})["seeds"] = _parse_seeds(args)
    if args.threads:
        cfg.setdefault("compare", {})["threads"] = args.threads
    rep = compare_mod.run_compare(cfg)
    files = report.emit_compare(rep, args.out)
    print(f"monotone verdict: {rep.verdict} "
          f"({', '.join(f'{k}={v}' for k, v in sorted(rep.monotone.items()))}) "
          f"-> {', '.join(str(f) for f in files)}")
    return 0 if rep.verdict else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="smolkin",
        description="Coagulating Brownian particles and their kinetic limit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--seeds", default=None,
                       help="comma-separated seed list")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("check", help="run the structural hypothesis checks")
    common(p)
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("kernel", help="tabulate the effective kernel")
    common(p)
    p.add_argument("--a-grid", default=None, metavar="MIN:MAX:PPD")
    p.set_defaults(fn=_cmd_kernel)

    p = sub.add_parser("sim", help="run particle simulations")
    common(p)
    p.add_argument("--snapshots", default=None,
                   help="comma-separated snapshot times")
    p.set_defaults(fn=_cmd_sim)

    p = sub.add_parser("pde", help="solve the diffusion-coagulation system")
    common(p)
    p.set_defaults(fn=_cmd_pde)

    p = sub.add_parser("scaling", help="critical scaling exponents")
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--blowup", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_scaling)

    p = sub.add_parser("compare", help="eps-ladder kinetic-limit comparison")
    common(p)
    p.set_defaults(fn=_cmd_compare)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
