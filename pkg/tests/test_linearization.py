import numpy as np
import pytest
from numpy.testing import assert_allclose

from jlce.linearization import gamma_linearize, position_linearize


def fd_gamma(r, d, gamma, h=1e-6):
    """Central finite difference of the standardized residual in gamma."""
    up = (r - d) * d ** (-0.5 * (gamma + h))
    dn = (r - d) * d ** (-0.5 * (gamma - h))
    return (up - dn) / (2 * h)


def fd_position(f, x, scale=1.0):
    """Central finite-difference gradient of a scalar function of a 2-vector."""
    h = 1e-6 * scale
    grad = np.zeros(2)
    for k in range(2):
        up = np.array(x, dtype=float)
        dn = np.array(x, dtype=float)
        up[k] += h
        dn[k] -= h
        grad[k] = (f(up) - f(dn)) / (2 * h)
    return grad


class TestGammaLinearize:
    def test_zero_residual(self):
        lin = gamma_linearize(5.0, 5.0, 2.7)
        assert lin.g == 0.0
        assert lin.delta_gamma == 0.0

    def test_unit_distance_kills_derivative(self):
        lin = gamma_linearize(2.0, 1.0, 3.0)
        assert lin.g == 1.0
        assert lin.delta_gamma == 0.0

    def test_matches_finite_difference(self):
        lin = gamma_linearize(11.0, 10.0, 2.0)
        assert_allclose(lin.delta_gamma, fd_gamma(11.0, 10.0, 2.0), rtol=1e-8)

    def test_rejects_nonpositive_distance(self):
        with pytest.raises(ValueError):
            gamma_linearize(1.0, 0.0, 2.0)


class TestPositionLinearize:
    def test_direct_substitution(self):
        lin = position_linearize([1.0, 0.0], [0.0, 0.0], 1.0, 2.0)
        assert_allclose(lin.unit[0], [1.0, 0.0])
        assert_allclose(lin.omega[0], [2.0, 0.0])
        assert lin.upsilon[0] == 0.0
        assert_allclose(lin.resid_grad[0], [-1.0, 0.0])

    def test_zero_residual_reduces_gradient(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-30, 30, 2)
            xi = rng.uniform(-30, 30, 2)
            gamma = rng.uniform(0.5, 4.0)
            d = np.linalg.norm(x - xi)
            lin = position_linearize(x, xi, d, gamma)
            assert_allclose(
                lin.resid_grad[0], -lin.unit[0] / d ** (gamma / 2), rtol=1e-12
            )

    def test_unit_norms(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-10, 10, 2)
        sensors = rng.uniform(-10, 10, (6, 2))
        lin = position_linearize(x, sensors, np.ones(6), 3.0)
        assert_allclose(np.linalg.norm(lin.unit, axis=1), np.ones(6), rtol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            x = rng.uniform(-50, 50, 2)
            xi = rng.uniform(-50, 50, 2)
            if np.linalg.norm(x - xi) < 0.5:
                continue
            gamma = rng.uniform(0.5, 4.0)
            d = np.linalg.norm(x - xi)
            r = d + rng.standard_normal() * 0.1 * d
            lin = position_linearize(x, xi, r, gamma)

            omega_fd = fd_position(
                lambda p: gamma * np.log(np.linalg.norm(p - xi)), x, scale=max(1, d)
            )
            assert_allclose(lin.omega[0], omega_fd, rtol=1e-6, atol=1e-9)

            def h2(p):
                dp = np.linalg.norm(p - xi)
                return (r - dp) * dp ** (-gamma / 2)

            grad_fd = fd_position(h2, x, scale=max(1, d))
            assert_allclose(lin.resid_grad[0], grad_fd, rtol=1e-6, atol=1e-9)

    def test_sensor_side_antisymmetry(self):
        # gradients in the sensor coordinate are the negated target-side ones
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.uniform(-50, 50, 2)
            xi = rng.uniform(-50, 50, 2)
            d = np.linalg.norm(x - xi)
            if d < 0.5:
                continue
            gamma = rng.uniform(0.5, 4.0)
            r = d + rng.standard_normal() * 0.05 * d
            lin = position_linearize(x, xi, r, gamma)

            omega_fd = fd_position(
                lambda s: gamma * np.log(np.linalg.norm(x - s)), xi, scale=max(1, d)
            )
            assert_allclose(-lin.omega[0], omega_fd, rtol=1e-6, atol=1e-9)

            def h2_sensor(s):
                ds = np.linalg.norm(x - s)
                return (r - ds) * ds ** (-gamma / 2)

            grad_fd = fd_position(h2_sensor, xi, scale=max(1, d))
            assert_allclose(-lin.resid_grad[0], grad_fd, rtol=1e-6, atol=1e-9)

    def test_rejects_coincident_points(self):
        with pytest.raises(ValueError):
            position_linearize([1.0, 1.0], [1.0, 1.0], 1.0, 2.0)
