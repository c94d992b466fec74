"""Effective-kernel solver: bounds, Neumann oracle, derivative, table."""

import numpy as np
import pytest

from smolkin.kernel import (SolverError, build_kernel_table, u_epsilon)
from smolkin.model import ModelError
from smolkin.presets import alpha_preset, diffusion_preset


class TestTrivialAndBounds:
    def test_w_at_zero_coupling_is_exactly_zero(self, solver):
        w = solver.solve_w(0.0)
        assert np.all(w.w == 0.0)

    def test_negative_coupling_rejected(self, solver):
        with pytest.raises(ModelError):
            solver.solve_w(-1.0)

    @pytest.mark.parametrize("a", [0.1, 1.0, 10.0, 100.0])
    def test_w_bounded_in_minus_one_zero(self, solver, a):
        w = solver.solve_w(a)
        assert np.all(w.w <= 1e-8)
        assert np.all(w.w >= -1.0 - 1e-8)

    def test_w_monotone_decreasing_in_a(self, solver):
        ws = [solver.solve_w(a).w for a in (0.1, 1.0, 10.0, 100.0)]
        for lo, hi in zip(ws[:-1], ws[1:]):
            assert np.all(hi <= lo + 1e-10)

    def test_evaluation_reproduces_node_values(self, solver):
        w = solver.solve_w(1.0)
        vals = w(solver.grid.centers)
        assert np.allclose(vals, w.w, atol=1e-10)

    def test_far_field_decay(self, solver):
        w = solver.solve_w(1.0)
        far = w(np.array([[5.0, 0.0, 0.0]]))
        near = w(np.array([[0.0, 0.0, 0.0]]))
        assert abs(far) < abs(near) / 3.0
        # Newtonian far field ~ -a I(a) c0 |x|^{2-d}.
        assert far == pytest.approx(-1.0 * solver.grid.c0 / 5.0
                                    * solver.capture_integral(w), rel=0.05)


class TestNeumannOracle:
    def test_three_term_series_at_small_a(self, solver):
        # w = -a Gamma + a^2 F Gamma - a^3 F^2 Gamma + O(a^4)
        a = 0.1
        w = solver.solve_w(a).w
        g = solver.gamma_nodes
        fg = solver.apply_F(g)
        ffg = solver.apply_F(fg)
        series = -a * g + a**2 * fg - a**3 * ffg
        scale = float(np.max(np.abs(a * g)))
        assert float(np.max(np.abs(w - series))) <= 1e-3 * scale

    def test_leading_order_error_scales_quadratically(self, solver):
        errs = []
        for a in (0.05, 0.1):
            w = solver.solve_w(a).w
            errs.append(float(np.max(np.abs(w + a * solver.gamma_nodes))))
        # ||w + a Gamma|| = O(a^2): halving a divides the error by ~4.
        assert errs[1] / errs[0] == pytest.approx(4.0, rel=0.3)


class TestDerivative:
    @pytest.mark.parametrize("a", [0.1, 1.0, 10.0])
    def test_bracketed_by_secant_bounds(self, solver, a):
        w = solver.solve_w(a)
        dw = solver.dw_da(a, w)
        assert np.all(dw <= 1e-10)
        assert np.all(dw >= w.w / a - 1e-10)

    def test_finite_difference_agreement_first_order(self, solver):
        a = 1.0
        w = solver.solve_w(a)
        dw = solver.dw_da(a, w)
        errs = []
        for h in (0.1, 0.05):
            fd = (solver.solve_w(a + h).w - solver.solve_w(a - h).w) / (2 * h)
            errs.append(float(np.max(np.abs(fd - dw))))
        assert errs[0] < 0.05 * float(np.max(np.abs(dw)))
        assert errs[1] < errs[0]

    def test_requires_matching_coupling(self, solver):
        w = solver.solve_w(1.0)
        with pytest.raises(ModelError):
            solver.dw_da(2.0, w)


class TestCaptureTable:
    def test_capture_at_zero_is_one(self, kernel_table):
        assert kernel_table.capture(0.0) == 1.0

    def test_capture_decreasing_and_aI_nondecreasing(self, kernel_table):
        a = np.geomspace(1e-2, 1e2, 200)
        I = kernel_table.capture(a)
        assert np.all(I > 0.0) and np.all(I <= 1.0 + 1e-10)
        assert np.all(np.diff(I) <= 1e-12)
        assert np.all(np.diff(a * I) >= -1e-10)

    def test_out_of_range_coupling_rejected(self, kernel_table):
        with pytest.raises(ModelError):
            kernel_table.capture(1e5)
        with pytest.raises(ModelError):
            kernel_table.capture(-1.0)

    def test_beta_symmetric_and_bounded(self, kernel_table):
        n = np.geomspace(0.1, 10.0, 20)
        b = kernel_table.beta(n[:, None], n[None, :])
        assert np.allclose(b, b.T, atol=1e-14)
        assert np.all(b > 0.0) and np.all(b <= 1.0 + 1e-10)

    def test_zero_propensity_gives_zero_kernel(self, profile3, solver):
        table = build_kernel_table(
            alpha_preset("constant:0.0"), diffusion_preset("constant:1.0"),
            profile3, a_min=1e-1, a_max=1e1, points_per_decade=4,
            solver=solver)
        assert np.all(table.beta(1.0, 2.0) == 0.0)

    def test_interpolation_matches_direct_solve(self, kernel_table, solver):
        a = 3.7
        direct = solver.capture_integral(solver.solve_w(a))
        assert kernel_table.capture(a) == pytest.approx(direct, abs=2e-4)


class TestUEpsilon:
    def test_rescaling_identity(self, solver):
        w = solver.solve_w(1.0)
        x = np.array([[0.02, 0.0, 0.0]])
        eps = 0.1
        assert u_epsilon(w, x, eps) == pytest.approx(
            eps ** (2 - 3) * float(w(x / eps)))

    def test_requires_positive_eps(self, solver):
        w = solver.solve_w(1.0)
        with pytest.raises(ModelError):
            u_epsilon(w, np.zeros((1, 3)), 0.0)


class TestGridDiagnostics:
    def test_covered_volume_close_to_unit_ball(self, solver):
        ball = 4.0 / 3.0 * np.pi
        assert solver.grid.covered_volume == pytest.approx(ball, rel=0.15)

    def test_table_build_guards_monotonicity(self, profile3, solver):
        # A degenerate a-range still builds; the guards run silently.
        table = build_kernel_table(
            alpha_preset("constant:1.0"), diffusion_preset("constant:1.0"),
            profile3, a_min=0.5, a_max=2.0, points_per_decade=8,
            solver=solver)
        assert table.capture(1.0) < 1.0
