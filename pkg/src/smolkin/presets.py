"""Named presets and JSON model-config ingestion.

Model definitions are ingested from JSON with named presets only; there
is no formula parser.  String presets take the form "name" or
"name:arg", e.g. "power:0.5" for d(m) = m^-0.5 or "sum_eta:1.0" for
alpha(n, m) = n + m.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from math import exp

import numpy as np
from scipy import integrate

from .model import (
    CoagulationPropensity,
    DiffusionCoefficient,
    InitialDensity,
    InteractionProfile,
    ModelError,
    ModelParams,
    PhiFunction,
)
from .riesz import sphere_surface_area

__all__ = [
    "bump_profile",
    "bump_mollifier",
    "diffusion_preset",
    "alpha_preset",
    "phi_preset",
    "tau_preset",
    "initial_preset",
    "model_from_config",
    "load_model",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


def _split(spec: str):
    name, _, arg = spec.partition(":")
    return name, (float(arg) if arg else None)


def _bump_norm(dim: int, radius: float) -> float:
    val, _ = integrate.quad(
        lambda r: r ** (dim - 1) * exp(-1.0 / (1.0 - r * r)), 0.0, 1.0
    )
    return sphere_surface_area(dim) * val * radius**dim


def bump_profile(dim: int, radius: float = 1.0) -> InteractionProfile:
    """Normalized C-infinity bump supported on |x| < radius."""
    norm = _bump_norm(dim, radius)

    def fn(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x / radius) ** 2, axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside])) / norm
        return out

    return InteractionProfile(fn=fn, support_radius=radius, dim=dim,
                              quadrature_norm=1.0)


def bump_mollifier(dim: int):
    """Unit-integral bump xi on |x| < 1 used for mollified densities."""
    norm = _bump_norm(dim, 1.0)

    def xi(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x**2, axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside])) / norm
        return out

    return xi


def diffusion_preset(spec: str, mass_min: float = 1e-2) -> DiffusionCoefficient:
    name, arg = _split(spec)
    if name == "constant":
        value = 1.0 if arg is None else arg
        if value <= 0:
            raise ModelError("constant diffusivity must be positive")
        return DiffusionCoefficient(lambda m: np.full_like(np.asarray(m, float), value),
                                    bound=value)
    if name == "power":
        if arg is None or arg < 0:
            raise ModelError("power diffusivity needs a non-negative exponent")
        expo = arg
        return DiffusionCoefficient(lambda m: np.asarray(m, float) ** (-expo),
                                    bound=float(mass_min) ** (-expo))
    raise ModelError(f"unknown diffusion preset {spec!r}")


def alpha_preset(spec: str) -> CoagulationPropensity:
    name, arg = _split(spec)
    if name == "constant":
        value = 1.0 if arg is None else arg
        if value < 0:
            raise ModelError("constant propensity must be non-negative")
        return CoagulationPropensity(
            lambda n, m: np.full(np.broadcast_shapes(np.shape(n), np.shape(m)), value)
        )
    if name == "sum_eta":
        if arg is None:
            raise ModelError("sum_eta propensity needs an exponent")
        eta = arg
        return CoagulationPropensity(
            lambda n, m: np.asarray(n, float) ** eta + np.asarray(m, float) ** eta
        )
    if name == "min":
        return CoagulationPropensity(lambda n, m: np.minimum(n, m))
    raise ModelError(f"unknown propensity preset {spec!r}")


def phi_preset(spec: str, diffusion: DiffusionCoefficient) -> PhiFunction:
    name, arg = _split(spec)
    if name == "constant":
        value = 1.0 if arg is None else arg
        if value <= 0:
            raise ModelError("constant phi must be positive")
        return PhiFunction(lambda m: np.full_like(np.asarray(m, float), value))
    if name == "inverse_d":
        return PhiFunction(lambda m: 1.0 / diffusion(m))
    raise ModelError(f"unknown phi preset {spec!r}")


def tau_preset(spec: str):
    name, _ = _split(spec)
    if name == "inverse_square":
        return lambda n: (np.asarray(n, float) + 1.0) ** (-2.0)
    raise ModelError(f"unknown tau preset {spec!r}")


def initial_preset(cfg: dict, dim: int, box: float, Z: float) -> InitialDensity:
    """Build an initial density scaled so its total equals Z."""
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    if name == "gaussian_exp":
        sigma = float(cfg.pop("sigma", box / 6.0))
        mass_scale = float(cfg.pop("mass_scale", 1.0))
        mass_min = float(cfg.pop("mass_min", 1e-3))
        mass_max = float(cfg.pop("mass_max", 30.0 * mass_scale))
        _reject_unknown(cfg, "initial")
        centre = np.full(dim, box / 2.0)

        def spatial(x):
            x = np.asarray(x, dtype=float)
            r2 = np.sum((x - centre) ** 2, axis=-1)
            return np.exp(-r2 / (2.0 * sigma**2))

        def mass(n):
            return np.exp(-np.asarray(n, float) / mass_scale)

        raw = InitialDensity(spatial, mass, box, dim, mass_min, mass_max)
        scale = Z / raw.total(res=48)
        return InitialDensity(
            lambda x: scale * spatial(x), mass, box, dim, mass_min, mass_max
        )
    if name == "monodisperse_band":
        m0 = float(cfg.pop("mass", 1.0))
        width = float(cfg.pop("width", 0.05))
        _reject_unknown(cfg, "initial")
        lo, hi = m0 * (1.0 - width), m0 * (1.0 + width)
        height = Z / (box**dim * (hi - lo))

        def spatial(x):
            x = np.asarray(x, dtype=float)
            return np.ones(x.shape[:-1])

        def mass(n):
            n = np.asarray(n, dtype=float)
            return np.where((n >= lo) & (n <= hi), height, 0.0)

        return InitialDensity(spatial, mass, box, dim, lo * 0.5, hi * 2.0)
    raise ModelError(f"unknown initial preset {name!r}")


def _reject_unknown(extra: dict, section: str):
    if extra:
        raise ModelError(f"unknown keys in {section} config: {sorted(extra)}")


def model_from_config(cfg: dict) -> tuple[ModelParams, InitialDensity]:
    """Parse a model config dict into (ModelParams, InitialDensity)."""
    cfg = dict(cfg)
    version = cfg.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ModelError(
            f"config schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    try:
        dim = int(cfg.pop("dim", 3))
        box = float(cfg.pop("box"))
        eps = float(cfg.pop("epsilon"))
        Z = float(cfg.pop("Z"))
    except KeyError as exc:
        raise ModelError(f"missing required model key: {exc}") from exc

    initial_cfg = cfg.pop("initial")
    diffusion_spec = cfg.pop("diffusion", "constant:1.0")
    alpha_spec = cfg.pop("alpha", "constant:1.0")
    phi_spec = cfg.pop("phi", "constant:1.0")
    tau_spec = cfg.pop("tau", "inverse_square")
    profile_cfg = dict(cfg.pop("profile", {"name": "bump", "radius": 1.0}))
    _reject_unknown(cfg, "model")

    pname = profile_cfg.pop("name", "bump")
    radius = float(profile_cfg.pop("radius", 1.0))
    _reject_unknown(profile_cfg, "profile")
    if pname != "bump":
        raise ModelError(f"unknown profile preset {pname!r}")

    h = initial_preset(initial_cfg, dim, box, Z)
    diffusion = diffusion_preset(diffusion_spec, mass_min=h.mass_min)
    params = ModelParams(
        dim=dim,
        diffusion=diffusion,
        phi=phi_preset(phi_spec, diffusion),
        alpha=alpha_preset(alpha_spec),
        profile=bump_profile(dim, radius),
        epsilon=eps,
        Z=Z,
        box=box,
        tau=tau_preset(tau_spec),
    )
    return params, h


def load_model(path) -> tuple[ModelParams, InitialDensity]:
    with open(path) as fh:
        cfg = json.load(fh)
    return model_from_config(cfg.get("model", cfg))
