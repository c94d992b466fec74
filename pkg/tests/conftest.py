"""Shared fixtures: expensive kernel machinery is built once per session."""

import numpy as np
import pytest

from smolkin.kernel import KernelSolver, build_kernel_table
from smolkin.presets import alpha_preset, bump_profile, diffusion_preset


@pytest.fixture(scope="session")
def profile3():
    return bump_profile(3)


@pytest.fixture(scope="session")
def solver(profile3):
    return KernelSolver(profile3)


@pytest.fixture(scope="session")
def kernel_table(profile3, solver):
    return build_kernel_table(
        alpha_preset("constant:1.0"), diffusion_preset("constant:1.0"),
        profile3, a_min=1e-2, a_max=1e2, points_per_decade=16, solver=solver,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
