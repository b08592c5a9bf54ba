"""State-layer checks: densities, charges, entropy, gauge transformations."""

import math

import numpy as np
import pytest

from gfslab import (ContractViolationError, GaugeState, Grid, ModelParams,
                    WaveFunctional, cell_probability,
                    charge_density_and_total, charge_neutral_entropy,
                    current_density, density, functional_derivative,
                    functional_integral, gauge_parameter_gradient,
                    gauge_transform)


def uniform_state(grid):
    m = grid.n_points
    return WaveFunctional(np.full(m, 1.0 / math.sqrt(grid.measure_w * m),
                                  dtype=complex), grid)


def gaussian_density(grid, sigma=1.0):
    phi = grid.phi_axis
    rho = np.exp(-phi**2 / sigma**2)
    return rho / functional_integral(rho, grid)


class TestDensity:
    def test_uniform(self, grid2d):
        psi = uniform_state(grid2d)
        rho = density(psi)
        assert np.allclose(rho, 1.0 / (grid2d.measure_w * grid2d.n_points))
        assert functional_integral(rho, grid2d) == pytest.approx(1.0, abs=1e-14)

    def test_zero(self, grid2d):
        psi = WaveFunctional(np.zeros(grid2d.n_points, dtype=complex), grid2d)
        assert np.array_equal(density(psi), np.zeros(grid2d.n_points))

    def test_pointwise_oracle(self, rng, grid2d):
        v = rng.standard_normal(grid2d.n_points) + 1j * rng.standard_normal(
            grid2d.n_points)
        rho = density(WaveFunctional(v, grid2d))
        for j in range(0, grid2d.n_points, 7):
            assert rho[j] == pytest.approx(v[j].real**2 + v[j].imag**2, rel=1e-15)
        assert np.all(rho >= 0)


class TestCellProbability:
    def test_uniform(self, grid2d):
        rho = density(uniform_state(grid2d))
        p = cell_probability(rho, grid2d)
        assert np.allclose(p, 1.0 / grid2d.n_points, rtol=1e-14)

    def test_zero(self, grid2d):
        assert np.array_equal(
            cell_probability(np.zeros(grid2d.n_points), grid2d),
            np.zeros(grid2d.n_points))

    def test_sum_equals_integral(self, grid1d):
        rho = gaussian_density(grid1d)
        p = cell_probability(rho, grid1d)
        assert np.sum(p) == pytest.approx(functional_integral(rho, grid1d),
                                          rel=1e-14)


class TestChargeDensity:
    def test_uniform_matched_entropy_is_neutral(self, grid2d):
        rho = density(uniform_state(grid2d))
        m = grid2d.n_points
        q, total = charge_density_and_total(rho, math.log(m),
                                            ModelParams(mass_m=1.0), grid2d)
        assert np.max(np.abs(q)) < 1e-14
        assert abs(total) < 1e-14

    def test_uniform_zero_entropy_closed_form(self, grid2d):
        # w * sum rho log(1/M) = -log M for unit l and f
        rho = density(uniform_state(grid2d))
        m = grid2d.n_points
        _, total = charge_density_and_total(rho, 0.0, ModelParams(mass_m=1.0),
                                            grid2d)
        assert total == pytest.approx(-math.log(m), rel=1e-13)

    def test_length_scaling(self, grid2d):
        rho = density(uniform_state(grid2d))
        _, t1 = charge_density_and_total(rho, 0.0,
                                         ModelParams(mass_m=1.0, length_l=1.0),
                                         grid2d)
        _, t2 = charge_density_and_total(rho, 0.0,
                                         ModelParams(mass_m=1.0, length_l=2.0),
                                         grid2d)
        assert t2 == pytest.approx(t1 / 4.0, rel=1e-13)

    def test_not_homogeneous(self, grid1d):
        # doubling the state changes the charge by more than the naive factor
        rho = gaussian_density(grid1d)
        params = ModelParams(mass_m=1.0)
        _, q1 = charge_density_and_total(rho, 0.0, params, grid1d)
        _, q2 = charge_density_and_total(4.0 * rho, 0.0, params, grid1d)
        assert abs(q2 - 4.0 * q1) > 0.1 * abs(q1)

    def test_empty_cells_contribute_zero(self, grid1d):
        rho = np.zeros(grid1d.n_points)
        rho[3] = 1.0 / grid1d.measure_w
        q, total = charge_density_and_total(rho, 1.0, ModelParams(mass_m=1.0),
                                            grid1d)
        assert q[0] == 0.0 and np.isfinite(total)


class TestChargeNeutralEntropy:
    def test_uniform_is_log_m(self, grid2d):
        rho = density(uniform_state(grid2d))
        s = charge_neutral_entropy(rho, grid2d)
        assert abs(s - math.log(grid2d.n_points)) < 1e-12

    def test_single_cell_is_zero(self, grid1d):
        rho = np.zeros(grid1d.n_points)
        rho[10] = 1.0 / grid1d.measure_w
        assert charge_neutral_entropy(rho, grid1d) == pytest.approx(0.0, abs=1e-14)

    def test_gaussian_quadrature_oracle(self):
        # midpoint sums of Gaussians converge beyond any power of dphi, so
        # the discrete entropy matches -integral rho log(rho w) essentially
        # to machine precision on a wide, fine axis
        grid = Grid(1, 1.0, 201, 10.0)
        sigma = 1.0
        rho = gaussian_density(grid, sigma=np.sqrt(2.0) * sigma)
        s = charge_neutral_entropy(rho, grid)
        analytic = 0.5 * math.log(2.0 * math.pi * math.e * sigma**2) - math.log(
            grid.measure_w)
        assert s == pytest.approx(analytic, abs=1e-10)

    def test_neutralizes_charge(self, grid1d):
        rho = gaussian_density(grid1d)
        s = charge_neutral_entropy(rho, grid1d)
        _, total = charge_density_and_total(rho, s, ModelParams(mass_m=1.0),
                                            grid1d)
        assert abs(total) < 1e-12

    def test_requires_normalization(self, grid1d):
        with pytest.raises(ContractViolationError):
            charge_neutral_entropy(2.0 * gaussian_density(grid1d), grid1d)


class TestGaugeTransform:
    def setup_state(self, grid, rng):
        envelope = np.exp(-0.5 * grid.phi_axis**2)
        v = (rng.standard_normal(grid.n_points)
             + 1j * rng.standard_normal(grid.n_points)) * envelope
        psi = WaveFunctional(v, grid).normalized()
        a_t = 0.3 * envelope
        a_phi = np.stack([0.2 * envelope])
        e = np.stack([-functional_derivative(a_t, 0, grid)])
        return psi, GaugeState(a_t, a_phi, e, grid)

    def test_constant_parameter_is_global_phase(self, rng, grid1d):
        psi, gauge = self.setup_state(grid1d, rng)
        lam = np.full(grid1d.n_points, 0.7)
        psi2, gauge2 = gauge_transform(psi, gauge, lam)
        assert np.array_equal(gauge2.a_t, gauge.a_t)
        assert np.array_equal(gauge2.a_phi, gauge.a_phi)
        assert np.array_equal(gauge2.e_field, gauge.e_field)
        assert np.max(np.abs(psi2.values - np.exp(-0.7j) * psi.values)) < 1e-15
        # density invariant to machine precision (phase rotation rounds the
        # last bits, so exact bit identity is not achievable here)
        assert np.max(np.abs(density(psi2) - density(psi))) < 1e-15

    def test_zero_parameter_is_identity(self, rng, grid1d):
        psi, gauge = self.setup_state(grid1d, rng)
        psi2, gauge2 = gauge_transform(psi, gauge, np.zeros(grid1d.n_points))
        assert np.array_equal(psi2.values, psi.values)
        assert np.array_equal(gauge2.a_phi, gauge.a_phi)

    def test_time_component_shift(self, rng, grid1d):
        psi, gauge = self.setup_state(grid1d, rng)
        lam_dot = 0.1 * np.exp(-grid1d.phi_axis**2)
        _, gauge2 = gauge_transform(psi, gauge, np.zeros(grid1d.n_points),
                                    lam_dot)
        assert np.allclose(gauge2.a_t, gauge.a_t + lam_dot, atol=1e-16)

    def test_smooth_parameter_shifts_field_component(self, rng, grid1d):
        psi, gauge = self.setup_state(grid1d, rng)
        lam = 0.5 * np.exp(-grid1d.phi_axis**2 / 3.0)
        _, gauge2 = gauge_transform(psi, gauge, lam)
        expect = gauge.a_phi[0] + gauge_parameter_gradient(lam, 0, grid1d)
        assert np.allclose(gauge2.a_phi[0], expect, atol=1e-16)

    def test_gauge_parameter_gradient_kills_constants(self, grid2d):
        lam = np.full(grid2d.n_points, 3.21)
        for ax in range(2):
            assert np.array_equal(gauge_parameter_gradient(lam, ax, grid2d),
                                  np.zeros(grid2d.n_points))

    def test_gradient_matches_interior_stencil(self, rng, grid1d):
        lam = np.exp(-grid1d.phi_axis**2 / 2.0)
        a = gauge_parameter_gradient(lam, 0, grid1d)
        b = functional_derivative(lam, 0, grid1d)
        assert np.array_equal(a[1:-1], b[1:-1])


class TestCurrentDensity:
    def test_real_state_zero_field_is_exactly_zero(self, grid1d):
        phi = grid1d.phi_axis
        psi = WaveFunctional(np.exp(-phi**2 / 2).astype(complex), grid1d)
        j = current_density(psi, GaugeState.zero(grid1d), 0)
        assert np.array_equal(j, np.zeros(grid1d.n_points))

    def test_real_state_constant_field(self, grid1d):
        phi = grid1d.phi_axis
        psi = WaveFunctional(np.exp(-phi**2 / 2).astype(complex), grid1d)
        gauge = GaugeState.zero(grid1d)
        gauge.a_phi[0][:] = 0.37
        j = current_density(psi, gauge, 0)
        assert np.allclose(j, 0.37 * density(psi), atol=1e-15)

    def test_plane_wave_refinement(self):
        # J of envelope * exp(i k phi) approaches k rho at second order
        k = 0.9
        errs = []
        for n in (65, 129):
            g = Grid(1, 1.0, n, 6.0)
            phi = g.phi_axis
            psi = WaveFunctional(np.exp(-phi**2 / 2) * np.exp(1j * k * phi), g)
            j = current_density(psi, GaugeState.zero(g), 0)
            rho = density(psi)
            errs.append(np.max(np.abs(j[2:-2] - k * rho[2:-2])))
        assert 3.5 < errs[0] / errs[1] < 4.5
