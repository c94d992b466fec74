"""Coagulating Brownian particles, effective kernels, and their kinetic limit.

Modules
-------
model    : model inputs, hypothesis checks, initial sampling
kernel   : singular integral equation for the effective kernel beta
sim      : tau-leaping particle simulator and its diagnostics
pde      : sectional diffusion--coagulation solver
scaling  : power-law scaling algebra and numeric rescaling
compare  : eps-ladder comparison of particle runs against the PDE
report   : deterministic CSV / JSON / figure emission
cli      : command-line harness
"""

from .compare import ComparisonReport, run_compare
from .kernel import (EffectiveKernelTable, KernelSolver, SolverError,
                     build_kernel_table, solve_w, u_epsilon)
from .model import (InitialDensity, ModelError, ModelParams, ParticleSystem,
                    check_hypotheses, construct_phi, epsilon_for_count,
                    k_epsilon, sample_initial)
from .pde import (DensityField, MassGrid, PdeConfig, SpatialMesh,
                  StabilityError, WeakTestFunction, exact_constant_kernel,
                  run_pde, weak_residual)
from .presets import (bump_mollifier, bump_profile, load_model,
                      model_from_config)
from .scaling import (ScalingError, ScalingInput, blowup_exponents,
                      check_scaling_conditions, critical_exponents,
                      mass_exponent, rescale_field)
from .sim import (SimConfig, SimError, correlation_check, empirical_measure,
                  mollified_density, neighbor_pairs, simulate, theorem21_gap)

__version__ = "0.1.0"
