"""Particle simulator: neighbor search, thinning, determinism, diagnostics."""

import numpy as np
import pytest

from smolkin.model import ModelError, ModelParams, ParticleSystem, sample_initial
from smolkin.presets import (alpha_preset, bump_mollifier, bump_profile,
                             diffusion_preset, initial_preset, phi_preset)
from smolkin.sim import (EventRecord, SimConfig, collision_functional,
                         correlation_check, empirical_measure, mass_moments,
                         mollified_density, neighbor_pairs, simulate, step,
                         theorem21_gap)


def make_params(eps=0.05, Z=1.0, box=1.0, diffusion="constant:1.0",
                alpha="constant:1.0"):
    d = diffusion_preset(diffusion)
    return ModelParams(
        dim=3, diffusion=d, phi=phi_preset("constant:1.0", d),
        alpha=alpha_preset(alpha), profile=bump_profile(3),
        epsilon=eps, Z=Z, box=box,
    )


def gaussian_h(Z=1.0):
    return initial_preset({"name": "gaussian_exp"}, 3, 1.0, Z)


def brute_pairs(x, box, cutoff):
    n = len(x)
    iu, ju = np.triu_indices(n, k=1)
    diff = x[iu] - x[ju]
    diff -= box * np.round(diff / box)
    keep = np.sum(diff**2, axis=1) < cutoff**2
    return iu[keep], ju[keep]


class TestNeighborPairs:
    @pytest.mark.parametrize("n,cutoff", [(50, 0.3), (300, 0.11),
                                          (2000, 0.07)])
    def test_matches_brute_force(self, rng, n, cutoff):
        x = rng.random((n, 3))
        ci, cj = neighbor_pairs(x, 1.0, cutoff)
        bi, bj = brute_pairs(x, 1.0, cutoff)
        assert np.array_equal(ci, bi)
        assert np.array_equal(cj, bj)

    def test_periodic_wraparound(self):
        x = np.array([[0.01, 0.5, 0.5], [0.99, 0.5, 0.5]])
        ci, cj = neighbor_pairs(x, 1.0, 0.05)
        assert list(ci) == [0] and list(cj) == [1]

    def test_empty_and_single(self):
        assert len(neighbor_pairs(np.empty((0, 3)), 1.0, 0.1)[0]) == 0
        assert len(neighbor_pairs(np.zeros((1, 3)), 1.0, 0.1)[0]) == 0


class TestTimeStep:
    def test_default_policy(self):
        params = make_params(eps=0.1)
        assert SimConfig(c_delta=0.2).time_step(params) == pytest.approx(
            0.2 * 0.01 / 2.0)

    def test_override_validated(self):
        params = make_params()
        assert SimConfig(dt=1e-3).time_step(params) == 1e-3
        with pytest.raises(ModelError):
            SimConfig(dt=-1.0).time_step(params)


def isolated_pair_lattice(eps, per_side, spacing, masses=(1.0, 3.0)):
    """P^3 coincident particle pairs, far apart, zero effective diffusion."""
    centers = []
    for i in range(per_side):
        for j in range(per_side):
            for k in range(per_side):
                centers.append([(i + 0.5) * spacing, (j + 0.5) * spacing,
                                (k + 0.5) * spacing])
    centers = np.array(centers)
    P = len(centers)
    x = np.repeat(centers, 2, axis=0)
    m = np.tile(masses, P)
    return ParticleSystem(
        ids=np.arange(2 * P), x=x, m=m, alive=np.ones(2 * P, dtype=bool),
        t=0.0, epsilon=eps, box=float(per_side * spacing), seed=123,
    )


class TestThinningOracle:
    def test_firing_frequency_and_survivor_side(self):
        # Coincident pairs, frozen positions: each fires independently
        # with p = 1 - exp(-2 V(0) alpha dt / eps^2).
        eps, per_side, spacing = 0.01, 20, 0.05
        state = isolated_pair_lattice(eps, per_side, spacing)
        prof = bump_profile(3)
        d = diffusion_preset("constant:1e-20")
        params = ModelParams(
            dim=3, diffusion=d, phi=phi_preset("constant:1.0", d),
            alpha=alpha_preset("constant:1.0"), profile=prof,
            epsilon=eps, Z=1.0, box=state.box,
        )
        dt = 5e-6
        lam = 2.0 * float(prof(np.zeros((1, 3)))[0]) / eps**2
        p = -np.expm1(-lam * dt)
        P = per_side**3
        step(state, SimConfig(dt=dt), params)

        fired = len(state.events)
        se = np.sqrt(P * p * (1.0 - p))
        assert abs(fired - P * p) <= 3.0 * se

        # Survivor side: P(side = i) = m_i / (m_i + m_j) = 1/4.
        frac_i = np.mean([e.side == "i" for e in state.events])
        side_se = np.sqrt(0.25 * 0.75 / fired)
        assert abs(frac_i - 0.25) <= 3.0 * side_se

        # Coagulation moves mass into the survivor: total is unchanged.
        assert state.total_mass == pytest.approx(4.0 * P)


class TestDiffusionOracle:
    def test_msd_matches_brownian_motion(self):
        params = make_params(eps=0.02, Z=20.0, alpha="constant:0.0")
        h = gaussian_h(20.0)
        state = sample_initial(h, params, seed=5)
        t = 0.2
        simulate(state, SimConfig(dt=0.02), params, t)
        msd = float(np.mean(np.sum(state.disp**2, axis=1)))
        assert msd / (2.0 * 3.0 * t) == pytest.approx(1.0, abs=0.1)


class TestDeterminismAndConservation:
    def run(self, seed):
        params = make_params(eps=0.05, Z=2.0)
        state = sample_initial(gaussian_h(2.0), params, seed=seed)
        simulate(state, SimConfig(c_delta=0.5), params, 0.3)
        return state

    def test_identical_seeds_identical_bits(self):
        a, b = self.run(3), self.run(3)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.m, b.m)
        assert a.collision_integral == b.collision_integral
        assert a.events == b.events

    def test_different_seeds_differ(self):
        a, c = self.run(3), self.run(4)
        assert not np.array_equal(a.x, c.x)

    def test_mass_and_count_bookkeeping(self):
        a = self.run(3)
        n0 = len(a.ids)
        assert a.count + len(a.events) == n0
        params = make_params(eps=0.05, Z=2.0)
        init = sample_initial(gaussian_h(2.0), params, seed=3)
        assert a.total_mass == pytest.approx(init.total_mass, abs=1e-12)


class TestEventRecord:
    def test_validation(self):
        with pytest.raises(ModelError):
            EventRecord(t=0.0, i=0, j=1, m_i=-1.0, m_j=1.0, side="i")
        with pytest.raises(ModelError):
            EventRecord(t=0.0, i=0, j=1, m_i=1.0, m_j=1.0, side="left")
        e = EventRecord(t=0.0, i=0, j=1, m_i=1.0, m_j=2.0, side="j")
        assert e.survivor_mass == 3.0


class TestDiagnostics:
    def test_empirical_measure_totals(self):
        params = make_params(eps=0.05, Z=2.0)
        state = sample_initial(gaussian_h(2.0), params, seed=0)
        snap = empirical_measure(state, 3)
        assert snap.total_measure == pytest.approx(0.05 * state.count)
        assert snap.total_mass == pytest.approx(0.05 * state.total_mass)

    def test_mollified_density_integrates_to_measure(self):
        params = make_params(eps=0.02, Z=1.0)
        state = sample_initial(gaussian_h(), params, seed=1)
        xi = bump_mollifier(3)
        res = 16
        axis = (np.arange(res) + 0.5) / res
        g = np.meshgrid(axis, axis, axis, indexing="ij")
        pts = np.stack([a.ravel() for a in g], axis=-1)
        edges = np.array([0.0, np.inf])
        dens = mollified_density(state, 0.3, xi, pts, edges)
        total = float(np.sum(dens)) / res**3
        assert total == pytest.approx(0.02 * state.count, rel=0.1)

    def test_mollified_density_warns_near_microscale(self):
        params = make_params(eps=0.05, Z=1.0)
        state = sample_initial(gaussian_h(), params, seed=1)
        with pytest.warns(UserWarning):
            mollified_density(state, 0.1, bump_mollifier(3),
                              np.zeros((1, 3)), np.array([0.0, np.inf]))

    def test_mass_moments(self):
        params = make_params(eps=0.1, Z=1.0)
        state = sample_initial(gaussian_h(), params, seed=2)
        count, mass, m2, heavy = mass_moments(state, 2.0, 1.0, 3)
        assert count == state.count
        assert mass == pytest.approx(0.1 * state.total_mass)
        assert 0.0 <= heavy <= 1.0

    def test_collision_functional_requires_states(self):
        with pytest.raises(ModelError):
            collision_functional([])


class TestCorrelationInputs:
    def test_rejects_bad_k_and_factors(self):
        params = make_params()
        h = gaussian_h()
        K = lambda x: np.ones(np.shape(x)[:-1])
        with pytest.raises(ModelError):
            correlation_check(params, h, [K] * 4, 4, [0], 0.1)
        with pytest.raises(ModelError):
            correlation_check(params, h, [K], 2, [0], 0.1)
        with pytest.raises(ModelError):
            correlation_check(params, h, [K, K], 2, [], 0.1)


class TestGapInputs:
    def test_delta_must_be_macroscopic(self):
        params = make_params(eps=0.05)
        state = sample_initial(gaussian_h(), params, seed=0)
        with pytest.raises(ModelError):
            theorem21_gap(state, params, SimConfig(), lambda a: 1.0,
                          lambda x, n, t: np.ones(np.shape(x)[:-1]),
                          delta=0.08, horizon=0.1, mass_cap=8.0,
                          xi=bump_mollifier(3))
