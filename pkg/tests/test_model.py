"""Model inputs, hypothesis checks, and initial sampling."""

import numpy as np
import pytest
from scipy import integrate

from smolkin.model import (InteractionProfile, ModelError, ModelParams,
                           ParticleSystem, check_hypotheses, construct_phi,
                           epsilon_for_count, k_epsilon, rho_of_n,
                           sample_initial)
from smolkin.presets import (alpha_preset, bump_profile, diffusion_preset,
                             initial_preset, model_from_config, phi_preset,
                             tau_preset)


def make_params(eps=0.1, Z=1.0, box=1.0, dim=3, diffusion="constant:1.0",
                alpha="constant:1.0"):
    d = diffusion_preset(diffusion)
    return ModelParams(
        dim=dim, diffusion=d, phi=phi_preset("constant:1.0", d),
        alpha=alpha_preset(alpha), profile=bump_profile(dim),
        epsilon=eps, Z=Z, box=box,
    )


class TestScaleFactors:
    @pytest.mark.parametrize("eps,d,expected", [
        (0.1, 3, 10.0),
        (0.1, 4, 100.0),
        (0.5, 3, 2.0),
    ])
    def test_k_epsilon_power(self, eps, d, expected):
        assert k_epsilon(eps, d) == pytest.approx(expected)

    def test_k_epsilon_log_in_2d(self):
        assert k_epsilon(0.1, 2) == pytest.approx(abs(np.log(0.1)))

    @pytest.mark.parametrize("eps", [0.0, 1.0, 1.5, -0.1])
    def test_k_epsilon_rejects_bad_eps(self, eps):
        with pytest.raises(ModelError):
            k_epsilon(eps, 3)

    def test_epsilon_for_count_round_trip(self):
        eps = epsilon_for_count(100, 2.0, 3)
        assert k_epsilon(eps, 3) * 2.0 == pytest.approx(100.0)

    def test_epsilon_for_count_rejects_2d(self):
        with pytest.raises(ModelError):
            epsilon_for_count(100, 2.0, 2)


class TestInteractionProfile:
    def test_bump_integrates_to_one(self):
        prof = bump_profile(3)
        val, _ = integrate.quad(
            lambda r: 4.0 * np.pi * r**2
            * float(prof(np.array([[r, 0.0, 0.0]]))[0]), 0.0, 1.0)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_vanishes_outside_support(self):
        prof = bump_profile(3, radius=0.5)
        pts = np.array([[0.6, 0.0, 0.0], [0.0, 0.9, 0.0]])
        assert np.all(prof(pts) == 0.0)

    def test_bad_normalization_rejected(self):
        with pytest.raises(ModelError):
            InteractionProfile(fn=lambda x: np.zeros(x.shape[:-1]),
                               support_radius=1.0, dim=3,
                               quadrature_norm=0.5)


class TestModelParams:
    def test_particle_count(self):
        params = make_params(eps=0.1, Z=2.0)
        assert params.particle_count == 20

    def test_epsilon_range_enforced(self):
        with pytest.raises(ModelError):
            make_params(eps=0.3, box=1.0)   # >= box / (4 C0)

    def test_dimension_at_least_three(self):
        with pytest.raises(ModelError):
            make_params(dim=2)


class TestConstructPhi:
    def test_rising_d_gives_inverse(self):
        d = lambda m: np.asarray(m, float) ** 0.5
        phi = construct_phi(d, [0.1, 10.0])
        m = np.geomspace(0.1, 10.0, 40)
        prod = phi(m) * d(m)
        assert np.allclose(prod, prod[0])

    def test_falling_d_gives_constant(self):
        d = lambda m: np.asarray(m, float) ** -0.5
        phi = construct_phi(d, [0.1, 10.0])
        m = np.geomspace(0.1, 10.0, 40)
        assert np.allclose(phi(m), phi(m)[0])

    def test_piecewise_monotonicity(self):
        # V-shaped diffusivity: falling then rising.
        d = lambda m: np.where(np.asarray(m, float) < 1.0,
                               1.0 / np.asarray(m, float),
                               np.asarray(m, float))
        phi = construct_phi(d, [0.1, 1.0, 10.0])
        m = np.geomspace(0.1, 10.0, 200)
        assert np.all(np.diff(phi(m)) <= 1e-12)
        assert np.all(np.diff(phi(m) * d(m)) <= 1e-9)

    def test_non_monotone_stretch_rejected(self):
        d = lambda m: np.sin(np.asarray(m, float))
        with pytest.raises(ModelError):
            construct_phi(d, [0.1, 6.0])

    def test_out_of_range_evaluation_rejected(self):
        phi = construct_phi(lambda m: np.asarray(m, float), [1.0, 2.0])
        with pytest.raises(ModelError):
            phi(5.0)


class TestRho:
    def test_constant_alpha_matches_quadrature(self):
        tau = tau_preset("inverse_square")
        alpha = alpha_preset("constant:1.0")
        n = 2.0
        m = np.linspace(1e-9, n - 1e-9, 20001)
        oracle = np.trapezoid(tau(m) * tau(n - m), m) / float(tau(n))
        assert rho_of_n(alpha, tau, n) == pytest.approx(oracle, rel=1e-4)

    def test_zero_at_zero_mass(self):
        tau = tau_preset("inverse_square")
        assert rho_of_n(alpha_preset("constant:1.0"), tau, 0.0) == 0.0


class TestSampleInitial:
    def setup_method(self):
        self.params = make_params(eps=0.05, Z=2.0)
        self.h = initial_preset({"name": "gaussian_exp"}, 3, 1.0, 2.0)

    def test_count_and_support(self):
        st = sample_initial(self.h, self.params, seed=3)
        assert st.count == self.params.particle_count
        assert np.all((st.x >= 0) & (st.x < 1.0))
        assert np.all(st.m > 0)
        assert np.all(st.m <= self.h.mass_max)

    def test_seed_reproducibility(self):
        a = sample_initial(self.h, self.params, seed=7)
        b = sample_initial(self.h, self.params, seed=7)
        c = sample_initial(self.h, self.params, seed=8)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.m, b.m)
        assert not np.array_equal(a.x, c.x)

    def test_mass_marginal_median(self):
        # Exp(1) mass marginal: median log 2.
        params = make_params(eps=0.014, Z=1.0)   # ~71 particles... use many
        big = make_params(eps=0.005, Z=20.0)     # 4000 particles
        st = sample_initial(self.h, big, seed=0)
        assert np.median(st.m) == pytest.approx(np.log(2.0), rel=0.08)
        assert params.particle_count > 0

    def test_poisson_mode_differs(self):
        a = sample_initial(self.h, self.params, mode="poisson", seed=11)
        assert a.count > 0
        with pytest.raises(ModelError):
            sample_initial(self.h, self.params, mode="bogus")


class TestParticleSystem:
    def test_rejects_nonpositive_alive_mass(self):
        with pytest.raises(ModelError):
            ParticleSystem(
                ids=np.array([0]), x=np.zeros((1, 3)), m=np.array([0.0]),
                alive=np.array([True]), t=0.0, epsilon=0.05, box=1.0, seed=0,
            )

    def test_copy_is_independent(self):
        st = ParticleSystem(
            ids=np.array([0]), x=np.zeros((1, 3)), m=np.array([1.0]),
            alive=np.array([True]), t=0.0, epsilon=0.05, box=1.0, seed=0,
        )
        cp = st.copy()
        cp.m[0] = 5.0
        assert st.m[0] == 1.0


class TestHypothesisChecks:
    def test_all_pass_on_benign_model(self):
        params = make_params(eps=0.05)
        h = initial_preset({"name": "gaussian_exp", "mass_min": 0.05}, 3,
                           1.0, 1.0)
        rep = check_hypotheses(params, h)
        assert rep.all_passed
        names = [c.name for c in rep.checks]
        assert "riesz_energy" in names and "propensity_ratio" in names

    def test_constant_alpha_near_zero_mass_reported_not_raised(self):
        # alpha == 1 with mass support reaching toward 0 makes the
        # propensity ratio sup alpha / (m d^{d/2} phi^{d-1}) blow up.
        params = make_params(eps=0.05)
        h = initial_preset({"name": "gaussian_exp", "mass_min": 1e-6}, 3,
                           1.0, 1.0)
        rep = check_hypotheses(params, h)
        ratio = next(c for c in rep.checks if c.name == "propensity_ratio")
        assert not ratio.passed
        assert not rep.all_passed

    def test_report_round_trips_to_dict(self):
        params = make_params(eps=0.05)
        h = initial_preset({"name": "gaussian_exp", "mass_min": 0.05}, 3,
                           1.0, 1.0)
        d = check_hypotheses(params, h).as_dict()
        assert set(d) == {"all_passed", "checks"}


class TestConfigIngestion:
    def base_config(self):
        return {
            "schema_version": 1, "dim": 3, "box": 1.0, "epsilon": 0.05,
            "Z": 1.0, "initial": {"name": "gaussian_exp"},
        }

    def test_round_trip(self):
        params, h = model_from_config(self.base_config())
        assert params.epsilon == 0.05
        assert h.total() == pytest.approx(1.0, rel=1e-3)

    def test_unknown_keys_rejected(self):
        cfg = self.base_config()
        cfg["bogus"] = 1
        with pytest.raises(ModelError):
            model_from_config(cfg)

    def test_schema_version_required(self):
        cfg = self.base_config()
        del cfg["schema_version"]
        with pytest.raises(ModelError):
            model_from_config(cfg)

    def test_monodisperse_band_total(self):
        cfg = self.base_config()
        cfg["initial"] = {"name": "monodisperse_band", "mass": 1.0,
                          "width": 0.05}
        cfg["Z"] = 4.0
        _, h = model_from_config(cfg)
        # total() uses a fixed geometric quadrature grid, which resolves
        # the sharp band edges only to a few parts in a thousand.
        assert h.total() == pytest.approx(4.0, rel=5e-3)
