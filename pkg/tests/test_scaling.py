"""Scaling algebra: exponents, conditions, blow-up branch, rescaling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smolkin.pde import (DensityField, MassGrid, PdeConfig, SpatialMesh,
                         WeakTestFunction, run_pde, weak_residual)
from smolkin.scaling import (ScalingError, ScalingInput, blowup_exponents,
                             check_scaling_conditions, critical_exponents,
                             mass_exponent, rescale_field, rescaled_residual)


class TestCriticalExponents:
    def test_phi1_eta0_d3(self):
        ce = critical_exponents(ScalingInput(phi=1.0, eta=0.0, dim=3))
        assert ce.as_tuple() == pytest.approx((1.0, 2.0, 0.0))

    def test_d2_branch_is_universal(self):
        for phi, eta in [(0.3, 0.2), (1.0, 1.0), (2.0, 0.0)]:
            ce = critical_exponents(ScalingInput(phi=phi, eta=eta, dim=2))
            assert ce.as_tuple() == (0.0, 1.0, 0.5)

    @pytest.mark.parametrize("phi,eta", [(0.0, 1.0), (2.0 / 3.0, 0.0)])
    def test_singular_denominator_raises(self, phi, eta):
        with pytest.raises(ScalingError):
            critical_exponents(ScalingInput(phi=phi, eta=eta, dim=3))

    def test_conditions_on_grid(self):
        # 20x20 grid avoiding the singular line eta + 3 phi / 2 = 1.
        phis = np.linspace(0.7, 2.0, 20)
        etas = np.linspace(0.0, 1.5, 20)
        worst = 0.0
        for phi in phis:
            for eta in etas:
                inp = ScalingInput(phi=float(phi), eta=float(eta), dim=3)
                ce = critical_exponents(inp)
                rep = check_scaling_conditions(ce.alpha, ce.gamma, ce.tau, inp)
                assert rep.all_satisfied(1e-12)
                worst = max(worst, abs(mass_exponent(ce.alpha, ce.gamma,
                                                     ce.tau, 3)))
        assert worst <= 1e-12

    @given(phi=st.floats(0.75, 3.0), eta=st.floats(0.0, 2.0),
           dim=st.sampled_from([3, 4, 5]))
    @settings(max_examples=60, deadline=None)
    def test_conditions_hold_generically(self, phi, eta, dim):
        inp = ScalingInput(phi=phi, eta=eta, dim=dim)
        if abs(eta + phi * dim / 2.0 - 1.0) < 1e-6:
            return
        ce = critical_exponents(inp)
        rep = check_scaling_conditions(ce.alpha, ce.gamma, ce.tau, inp)
        assert rep.all_satisfied(1e-9)


class TestInputValidation:
    def test_negative_exponents_rejected(self):
        with pytest.raises(ScalingError):
            ScalingInput(phi=-0.1, eta=0.0)
        with pytest.raises(ScalingError):
            ScalingInput(phi=0.5, eta=0.0, dim=1)

    def test_nonfinite_rejected(self):
        with pytest.raises(ScalingError):
            ScalingInput(phi=np.nan, eta=0.0)


class TestBlowup:
    def test_exponents(self):
        gamma, alpha, regime = blowup_exponents(1.0, 0.5)
        assert gamma == pytest.approx(1.0)
        assert alpha == pytest.approx(2.5)
        assert regime == "scaling-permits-heavy-mass"

    def test_regime_boundary_is_phi_plus_eta_one(self):
        for phi in np.linspace(0.1, 2.0, 20):
            for eta in np.linspace(0.0, 2.0, 20):
                _, _, regime = blowup_exponents(float(phi), float(eta))
                heavy = regime == "scaling-permits-heavy-mass"
                assert heavy == (phi + eta >= 1.0)

    def test_requires_positive_phi(self):
        with pytest.raises(ScalingError):
            blowup_exponents(0.0, 1.0)


def small_trajectory():
    """Short homogeneous constant-kernel run with dense snapshots."""
    h = lambda x, n: np.exp(-np.asarray(n, float)) * np.ones(np.shape(x)[:-1])
    beta = lambda n, m: np.ones(np.broadcast_shapes(np.shape(n), np.shape(m)))
    d_fn = lambda m: np.ones_like(np.asarray(m, float))
    conf = PdeConfig(n_min=1e-3, n_max=400.0, bins=200, mesh_points=1,
                     dt=2e-3, horizon=0.5,
                     snapshot_times=tuple(np.linspace(0.0, 0.5, 26)))
    mesh = SpatialMesh(box=1.0, points=1, dim=3)
    return run_pde(h, d_fn, beta, conf, mesh), beta, d_fn


class TestRescaleField:
    def test_identity_at_lambda_one(self):
        result, beta, d_fn = small_trajectory()
        out = rescale_field(result.snapshots, 1.0, 1.0, 2.0, 0.0)
        for a, b in zip(out, result.snapshots):
            assert np.allclose(a.values, b.values, rtol=1e-10)
            assert a.t == b.t

    def test_mass_rescaling_exponent(self):
        result, _, _ = small_trajectory()
        lam, gamma, alpha, tau = 1.3, 1.0, 2.0, 0.0
        out = rescale_field(result.snapshots[:1], lam, gamma, alpha, tau)
        # Total mass scales by lam^(alpha - tau d - 2 gamma) = lam^0.
        ratio = out[0].total_mass() / result.snapshots[0].total_mass()
        assert ratio == pytest.approx(1.0, rel=2e-2)

    def test_support_escape_raises(self):
        result, _, _ = small_trajectory()
        with pytest.raises(ScalingError):
            rescale_field(result.snapshots, 1e4, 1.0, 2.0, 0.0,
                          escape_tol=1e-12)

    def test_invalid_lambda(self):
        result, _, _ = small_trajectory()
        with pytest.raises(ScalingError):
            rescale_field(result.snapshots, -1.0, 1.0, 2.0, 0.0)

    def test_critical_exponents_beat_wrong_ones(self):
        # The residual of the rescaled trajectory with the critical
        # (gamma, alpha, tau) stays near the base residual; a wrong
        # gamma degrades it several-fold.
        result, beta, d_fn = small_trajectory()
        J = WeakTestFunction(lambda x, n, t: np.asarray(n, float)
                             * np.exp(-np.asarray(n, float) / 50.0)
                             * np.ones(np.shape(x)[:-1]))
        lam = 1.25
        good, _ = rescaled_residual(result.snapshots, lam, 1.0, 2.0, 0.0,
                                    J, beta, d_fn, escape_tol=1e-2)
        bad, _ = rescaled_residual(result.snapshots, lam, 0.5, 2.0, 0.0,
                                   J, beta, d_fn, escape_tol=1e-2)
        assert abs(good) < abs(bad) / 2.0
