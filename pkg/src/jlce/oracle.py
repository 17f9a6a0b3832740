"""Independent brute-force references for validating the message-passing code.

Nothing here shares approximations with the variational updates: the grid
search maximizes the exact log-joint restricted to the target position, the
posterior moments for lambda0 and gamma come from direct 1-D quadrature of
the exact unnormalized densities, and the maximum-likelihood baseline is a
damped Gauss-Newton on the weighted range residuals with known channel
parameters (standing in for the reweighted-least-squares comparison methods,
whose internals are out of scope).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Scenario, _as_ranges
from .vmp import GammaBelief, ScalarGaussianBelief


class QuadratureError(RuntimeError):
    """Raised when doubling the quadrature grid still moves the result."""


class GaussNewtonDivergence(RuntimeError):
    """Raised when a Gauss-Newton step exceeds the field diagonal.

    Carries the iterate trace so callers can inspect or salvage the run.
    """

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple
    y_range: tuple
    resolution: int

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid resolution must be at least 2")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError("grid ranges must be non-degenerate")


def grid_map(
    r,
    scenario: Scenario,
    grid: GridSpec,
    gamma_fixed: float | None = None,
    lambda0_fixed: float | None = None,
) -> np.ndarray:
    """Exhaustive MAP surrogate over the target position.

    Nuisance parameters are pinned: sensors at their prior means, gamma and
    lambda0 at the supplied values (defaulting to the prior means). Returns
    the grid cell center maximizing likelihood plus target prior; terms not
    depending on x are constant over the grid and omitted.
    """
    r = _as_ranges(r)
    gamma = scenario.gamma_prior_mean if gamma_fixed is None else gamma_fixed
    lam = (
        scenario.lambda_prior_shape / scenario.lambda_prior_rate
        if lambda0_fixed is None
        else lambda0_fixed
    )
    sensors = scenario.sensor_prior_means
    xs = np.linspace(*grid.x_range, grid.resolution)
    ys = np.linspace(*grid.y_range, grid.resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)

    d = np.linalg.norm(pts[:, None, :] - sensors[None, :, :], axis=2)
    ok = np.all(d > 1e-9, axis=1)
    d = np.where(d > 1e-9, d, 1.0)
    score = np.sum(
        -0.5 * gamma * np.log(d) - lam * (r[None, :] - d) ** 2 / (2.0 * d**gamma),
        axis=1,
    )
    diff = pts - scenario.target_prior_mean
    prec = np.linalg.inv(scenario.target_prior_cov)
    score -= 0.5 * np.einsum("ij,jk,ik->i", diff, prec, diff)
    score[~ok] = -np.inf
    return pts[int(np.argmax(score))]


def _log_trapezoid_moments(log_f: np.ndarray, z: np.ndarray, powers=(1, 2)):
    """Moments of exp(log_f) over grid z by trapezoid, stabilized in log space."""
    shift = np.max(log_f)
    f = np.exp(log_f - shift)
    z0 = np.trapezoid(f, z)
    out = []
    for k in powers:
        out.append(np.trapezoid(f * z**k, z) / z0)
    return out


def lambda_posterior_quadrature(
    r, distances, gamma: float, prior: GammaBelief, n_points: int = 20001
):
    """Posterior mean and variance of the noise precision by direct quadrature.

    With positions and gamma fixed, the unnormalized posterior is
    Gamma(a, b) * lam**(N/2) * exp(-lam * S); integration runs on a log-spaced
    grid spanning six decades around the posterior mode, with a doubling
    check to confirm convergence. The conjugate closed form makes this case
    exactly integrable, which is what lets the quadrature itself be verified.
    """
    r = _as_ranges(r)
    d = np.asarray(distances, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    n = r.size
    s = float(np.sum((r - d) ** 2 / (2.0 * d**gamma)))

    shape_post = prior.shape + 0.5 * n
    mode = max((shape_post - 1.0), 0.5) / (prior.rate + s)

    def moments(num):
        lam = np.geomspace(mode / 1e3, mode * 1e3, num)
        log_f = (prior.shape + 0.5 * n - 1.0) * np.log(lam) - (prior.rate + s) * lam
        m1, m2 = _log_trapezoid_moments(log_f, lam)
        return m1, m2 - m1**2

    mean, var = moments(n_points)
    mean2, var2 = moments(2 * n_points - 1)
    if abs(mean2 - mean) > 1e-6 * abs(mean):
        raise QuadratureError("lambda0 quadrature did not converge under doubling")
    return mean2, var2


def gamma_posterior_quadrature(
    r, x, sensors, lambda0: float, prior: ScalarGaussianBelief, n_points: int = 20001
):
    """Posterior mean and variance of the path loss exponent by quadrature.

    Positions and lambda0 fixed; integrates the exact (not linearized)
    likelihood against the Gaussian prior over mean +/- 8 standard
    deviations, with a doubling check.
    """
    r = _as_ranges(r)
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    d = np.linalg.norm(np.asarray(x, dtype=float)[None, :] - sensors, axis=1)
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    log_d = np.log(d)
    half = 8.0 * math.sqrt(prior.var)

    def moments(num):
        g = np.linspace(prior.mean - half, prior.mean + half, num)
        log_f = -((g - prior.mean) ** 2) / (2.0 * prior.var)
        log_f = log_f + np.sum(
            -0.5 * g[:, None] * log_d[None, :]
            - lambda0 * (r - d)[None, :] ** 2 / (2.0 * d[None, :] ** g[:, None]),
            axis=1,
        )
        m1, m2 = _log_trapezoid_moments(log_f, g)
        return m1, m2 - m1**2

    mean, var = moments(n_points)
    mean2, var2 = moments(2 * n_points - 1)
    if abs(mean2 - mean) > 1e-6 * max(abs(mean), 1e-12):
        raise QuadratureError("gamma quadrature did not converge under doubling")
    return mean2, var2


def gauss_newton_ml(
    r,
    sensor_means,
    gamma_known: float,
    lambda0_known: float,
    x_init,
    max_iter: int = 50,
    step_tol: float = 1e-6,
    step_limit: float = 100.0 * math.sqrt(2.0),
):
    """Weighted least-squares position fit with known channel parameters.

    Minimizes sum_i (r_i - d_i)^2 / d_i**gamma by Levenberg-damped
    Gauss-Newton on the standardized residuals (damping x10 on a rejected
    step, /10 on an accepted one). Sensor positions are taken as exact and no
    prior is used; that is the point of the baseline. lambda0 scales the
    objective uniformly and does not move the minimizer; it is accepted to
    mirror the known-channel protocol.

    Raises GaussNewtonDivergence (with the iterate trace) when a step exceeds
    the field diagonal; the weighted objective decays toward zero at infinite
    distance, so runaway descent is a real failure mode.
    """
    anchors = np.atleast_2d(np.asarray(sensor_means, dtype=float))
    r = _as_ranges(r)
    x = np.asarray(x_init, dtype=float).copy()
    if np.any(np.linalg.norm(x - anchors, axis=1) < 1e-9):
        raise ValueError("x_init coincides with a sensor")

    def cost(p):
        d = np.linalg.norm(p - anchors, axis=1)
        if np.any(d < 1e-9):
            return np.inf
        return float(np.sum((r - d) ** 2 / d**gamma_known))

    damping = 1e-3
    f = cost(x)
    trace = [x.copy()]
    for _ in range(max_iter):
        diff = x - anchors
        d = np.linalg.norm(diff, axis=1)
        unit = diff / d[:, None]
        rho = (r - d) * d ** (-0.5 * gamma_known)
        jac = (-(1.0 + 0.5 * gamma_known * (r - d) / d) / d ** (0.5 * gamma_known))[
            :, None
        ] * unit
        lhs = jac.T @ jac + damping * np.eye(2)
        step = np.linalg.solve(lhs, -jac.T @ rho)
        step_norm = float(np.linalg.norm(step))
        if step_norm > step_limit:
            raise GaussNewtonDivergence(
                f"step of {step_norm:.1f} m exceeds the field diagonal", trace
            )
        candidate = x + step
        f_new = cost(candidate)
        if f_new < f:
            x, f = candidate, f_new
            damping /= 10.0
            trace.append(x.copy())
        else:
            damping *= 10.0
        if step_norm < step_tol:
            break
    return x


def ml_objective(r, sensor_means, gamma_known: float, x) -> float:
    """The baseline's weighted least-squares objective at a point."""
    anchors = np.atleast_2d(np.asarray(sensor_means, dtype=float))
    d = np.linalg.norm(np.asarray(x, dtype=float) - anchors, axis=1)
    return float(np.sum((_as_ranges(r) - d) ** 2 / d**gamma_known))
