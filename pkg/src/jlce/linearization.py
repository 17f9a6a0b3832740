"""First-order Taylor quantities used by the message updates.

Two nonlinear pieces of the log-likelihood get linearized around the current
iterate: the standardized residual g(gamma) = (r - d) / d**(gamma/2) as a
function of the path loss exponent, and the pair

    h1(x, x_i) = gamma * ln d_i         (noise-variance log-determinant term)
    h2(x, x_i) = (r_i - d_i) / d_i**(gamma/2)

as functions of the positions. Gradients with respect to the sensor position
are the negations of the target-side ones, since d_i depends on x - x_i only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Geometry closer than this is treated as an error, not regularized; the
# measurement model itself is singular at zero distance.
MIN_DISTANCE = 1e-9


@dataclass(frozen=True)
class GammaLinearization:
    """Standardized residuals and their derivative in the path loss exponent."""

    g: np.ndarray            # (r - d) / d**(gamma/2), dimensionless
    delta_gamma: np.ndarray  # d g / d gamma = -(1/2) (r - d) d**(-gamma/2) ln d


@dataclass(frozen=True)
class PositionLinearization:
    """Per-sensor position-space gradients at the expansion point.

    ``resid_grad`` is the gradient of h2 with respect to the target position
    (the paper-side expansion); sensor-side gradients are its negation.
    """

    unit: np.ndarray        # (N, 2) unit vectors (x - x_i) / d_i
    omega: np.ndarray       # (N, 2) gradient of gamma * ln d_i, units 1/m
    upsilon: np.ndarray     # (N,) standardized residuals
    resid_grad: np.ndarray  # (N, 2) gradient of h2 w.r.t. x


def gamma_linearize(r_i, d_i, gamma: float) -> GammaLinearization:
    """Linearize the standardized residual in gamma at the current estimate."""
    r_i = np.asarray(r_i, dtype=float)
    d_i = np.asarray(d_i, dtype=float)
    if np.any(d_i <= 0):
        raise ValueError("distances must be positive")
    log_d = np.log(d_i)
    g = (r_i - d_i) * d_i ** (-0.5 * gamma)
    return GammaLinearization(g=g, delta_gamma=-0.5 * g * log_d)


def position_linearize(x, x_i, r_i, gamma: float) -> PositionLinearization:
    """Linearize h1 and h2 in the target position at the current iterate.

    Accepts a single sensor (shape (2,)) or a stack (shape (N, 2)); ranges
    broadcast accordingly.
    """
    x = np.asarray(x, dtype=float)
    x_i = np.atleast_2d(np.asarray(x_i, dtype=float))
    r_i = np.atleast_1d(np.asarray(r_i, dtype=float))
    diff = x[None, :] - x_i
    d = np.linalg.norm(diff, axis=1)
    if np.any(d < MIN_DISTANCE) or not np.all(np.isfinite(d)):
        raise ValueError("near-coincident target/sensor geometry")
    unit = diff / d[:, None]
    resid = r_i - d
    omega = (gamma / d)[:, None] * unit
    upsilon = resid * d ** (-0.5 * gamma)
    resid_grad = (-(1.0 + 0.5 * gamma * resid / d) / d ** (0.5 * gamma))[:, None] * unit
    return PositionLinearization(
        unit=unit, omega=omega, upsilon=upsilon, resid_grad=resid_grad
    )
