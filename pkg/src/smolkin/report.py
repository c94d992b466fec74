"""Deterministic output emission: delimited files, JSON, and figures.

Every writer goes through an atomic temp-file + rename so a failing run
never leaves partial files, floats are rendered with %.17g (exact
round-trip for IEEE-754 doubles), and all reductions feeding the
outputs are fixed-order, so identical (config, seeds) produce identical
bytes.  Each report path also renders a matplotlib figure next to its
delimited output.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = [
    "EmitError",
    "atomic_write_text",
    "write_csv",
    "write_json",
    "emit_compare",
    "emit_kernel",
    "emit_sim",
    "emit_pde",
    "emit_scaling",
    "emit_check",
]


class EmitError(RuntimeError):
    """Output emission failed; the message carries the path."""


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def atomic_write_text(path, text: str) -> Path:
    """Write text via temp file + rename in the destination directory."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc}") from exc
    return path


def write_csv(path, header, rows) -> Path:
    """Comma-delimited file with %.17g floats, atomic write."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _save_figure(fig, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def emit_compare(report, outdir) -> list:
    """compare.csv / compare.json / compare_gaps.png for a ComparisonReport."""
    outdir = Path(outdir)
    files = [write_csv(
        outdir / "compare.csv",
        ["epsilon", "seed_count", "J_id", "t", "gap", "se"],
        [(r.epsilon, r.seed_count, r.J_id, r.t, r.gap, r.se)
         for r in report.rows],
    )]
    files.append(write_json(outdir / "compare.json", {
        "epsilons": list(report.epsilons),
        "seeds": list(report.seeds),
        "delta": report.delta,
        "ladder": {k: list(v) for k, v in report.ladder.items()},
        "monotone": report.monotone,
        "verdict": report.verdict,
        "model_hash": report.model_hash,
    }))

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for J_id, vals in sorted(report.ladder.items()):
        ax.plot(report.epsilons, vals, "o-", label=J_id)
    ax.set_xlabel(r"$\epsilon$")
    ax.set_ylabel("mean gap")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.invert_xaxis()
    ax.legend(frameon=False)
    ax.set_title("kinetic-limit gap along the $\\epsilon$ ladder")
    fig.tight_layout()
    files.append(_save_figure(fig, outdir / "compare_gaps.png"))
    return files


def emit_kernel(table, mass_grid, outdir) -> list:
    """kernel.csv (a, I) and kernel_pairs.csv (n, m, alpha, beta) + figure."""
    outdir = Path(outdir)
    files = [write_csv(
        outdir / "kernel.csv", ["a", "I"],
        list(zip(table.a_grid, table.I_values)),
    )]
    mass_grid = np.asarray(mass_grid, dtype=float)
    rows = []
    for n in mass_grid:
        al = table.alpha(np.full_like(mass_grid, n), mass_grid)
        be = table.beta(np.full_like(mass_grid, n), mass_grid)
        rows.extend((n, m, a, b) for m, a, b in zip(mass_grid, al, be))
    files.append(write_csv(outdir / "kernel_pairs.csv",
                           ["n", "m", "alpha", "beta"], rows))

    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4))
    axes[0].loglog(table.a_grid, table.I_values)
    axes[0].set_xlabel("a")
    axes[0].set_ylabel("I(a)")
    axes[0].set_title("capture factor")
    bm = table.beta(mass_grid[:, None], mass_grid[None, :])
    im = axes[1].pcolormesh(mass_grid, mass_grid, bm, shading="auto")
    axes[1].set_xscale("log")
    axes[1].set_yscale("log")
    axes[1].set_xlabel("m")
    axes[1].set_ylabel("n")
    axes[1].set_title(r"$\beta(n, m)$")
    fig.colorbar(im, ax=axes[1])
    fig.tight_layout()
    files.append(_save_figure(fig, outdir / "kernel.png"))
    return files


def emit_sim(states, snapshots, moments, outdir) -> list:
    """events.csv / snapshots.csv / moments.csv + moments figure.

    ``states`` are final ParticleSystem objects (one per seed);
    ``snapshots`` are (seed, EmpiricalSnapshot) pairs; ``moments`` rows
    are (seed, t, count, mass, m2, heavy_fraction).
    """
    outdir = Path(outdir)
    ev_rows = []
    for state in states:
        for e in state.events:
            ev_rows.append((state.seed, e.t, e.i, e.j, e.m_i, e.m_j, e.side))
    files = [write_csv(outdir / "events.csv",
                       ["seed", "t", "i", "j", "m_i", "m_j", "side"], ev_rows)]

    dim = states[0].x.shape[1] if states else 3
    snap_rows = []
    for seed, snap in snapshots:
        for pid, pos, m in zip(snap.ids, snap.x, snap.m):
            snap_rows.append((seed, snap.t, pid, *pos, m))
    files.append(write_csv(
        outdir / "snapshots.csv",
        ["seed", "t", "id", *[f"x{k}" for k in range(dim)], "m"], snap_rows,
    ))
    files.append(write_csv(
        outdir / "moments.csv",
        ["seed", "t", "count", "mass", "m2", "heavy_fraction"], moments,
    ))

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    mom = np.array([[r[1], r[2]] for r in moments], dtype=float)
    if len(mom):
        for seed in sorted({r[0] for r in moments}):
            sel = np.array([r[0] == seed for r in moments])
            ax.plot(mom[sel, 0], mom[sel, 1], alpha=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("particle count")
    ax.set_title("coagulation progress per seed")
    fig.tight_layout()
    files.append(_save_figure(fig, outdir / "sim_moments.png"))
    return files


def emit_pde(result, outdir, residual: dict | None = None) -> list:
    """Marginals / moments CSVs, binary field dump, residual JSON, figure."""
    outdir = Path(outdir)
    rows = []
    for f in result.snapshots:
        marg = f.flat.sum(axis=1) * f.mesh.cell_volume
        rows.extend((f.t, n, v) for n, v in zip(f.grid.pivots, marg))
    files = [write_csv(outdir / "pde_marginals.csv", ["t", "n", "marginal"], rows)]

    ent = result.entropy if result.entropy is not None \
        else np.full(len(result.times), np.nan)
    files.append(write_csv(
        outdir / "pde_moments.csv",
        ["t", "number", "mass", "truncation_flux", "entropy"],
        zip(result.times, result.number, result.mass, result.flux, ent),
    ))

    last = result.snapshots[-1]
    dump = outdir / "pde_field.npz"
    try:
        dump.parent.mkdir(parents=True, exist_ok=True)
        np.savez(dump, t=last.t, pivots=last.grid.pivots,
                 edges=last.grid.edges, values=last.values)
    except OSError as exc:
        raise EmitError(f"cannot write {dump}: {exc}") from exc
    files.append(dump)

    if residual is not None:
        files.append(write_json(outdir / "pde_weak_residual.json", residual))

    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4))
    for f in result.snapshots:
        marg = f.flat.sum(axis=1) * f.mesh.cell_volume
        axes[0].loglog(f.grid.pivots, np.maximum(marg, 1e-300),
                       label=f"t={f.t:g}")
    axes[0].set_xlabel("n")
    axes[0].set_ylabel(r"$\int f\,dx$")
    axes[0].legend(frameon=False, fontsize=8)
    axes[1].plot(result.times, result.mass + result.flux, label="mass+flux")
    axes[1].plot(result.times, result.number, label="number")
    axes[1].set_xlabel("t")
    axes[1].legend(frameon=False)
    fig.tight_layout()
    files.append(_save_figure(fig, outdir / "pde.png"))
    return files


def emit_scaling(payload: dict, outdir) -> list:
    return [write_json(Path(outdir) / "scaling.json", payload)]


def emit_check(report, outdir) -> list:
    return [write_json(Path(outdir) / "hypotheses.json", report.as_dict())]
