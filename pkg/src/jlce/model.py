"""Generative range measurement model with distance-dependent Gaussian noise.

A target at unknown position x is ranged by N sensors at positions x_i,
each measurement being the true Euclidean distance plus zero-mean Gaussian
noise whose variance grows as a power law of the distance:

    r_i = ||x - x_i|| + eta_i,   eta_i ~ N(0, delta0_sq * d_i**gamma)

The reference distance is fixed at 1 m, so delta0_sq is the noise power at
1 m and gamma is the path loss exponent coupling noise to distance. All
unknowns (target, sensors, gamma, and the noise precision lambda0 =
1/delta0_sq) carry priors; this module provides the exact likelihood and
joint density the rest of the package estimates against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Fixed by convention; noise_variance() is the power law delta0_sq * d**gamma.
REFERENCE_DISTANCE = 1.0

LOG_2PI = math.log(2.0 * math.pi)


def _as_ranges(r) -> np.ndarray:
    """Accept a MeasurementSet or a bare array of ranges."""
    return np.asarray(getattr(r, "r", r), dtype=float)


@dataclass(frozen=True)
class Scenario:
    """Ground-truth world plus the prior hyperparameters handed to estimators.

    Covariances must be symmetric positive definite. ``sensor_offset`` is a
    coordinate shift applied to all sensor positions for far-field sweeps;
    it is stored here and applied by the experiment harness, not baked into
    the coordinates at construction.
    """

    target_true: np.ndarray            # (2,) m
    sensors_true: np.ndarray           # (N, 2) m
    sensor_prior_means: np.ndarray     # (N, 2) m
    sensor_prior_cov: np.ndarray       # (N, 2, 2) m^2
    target_prior_mean: np.ndarray      # (2,) m
    target_prior_cov: np.ndarray       # (2, 2) m^2
    gamma_true: float
    delta0_sq_true: float              # noise power at the reference distance, m^2
    gamma_prior_mean: float
    gamma_prior_var: float
    lambda_prior_shape: float          # Gamma(a, b) prior on lambda0 = 1/delta0_sq
    lambda_prior_rate: float
    reference_distance: float = REFERENCE_DISTANCE
    sensor_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        conv = {
            "target_true": np.asarray(self.target_true, dtype=float),
            "sensors_true": np.atleast_2d(np.asarray(self.sensors_true, dtype=float)),
            "sensor_prior_means": np.atleast_2d(
                np.asarray(self.sensor_prior_means, dtype=float)
            ),
            "target_prior_mean": np.asarray(self.target_prior_mean, dtype=float),
            "target_prior_cov": np.asarray(self.target_prior_cov, dtype=float),
            "sensor_offset": np.asarray(self.sensor_offset, dtype=float),
        }
        cov = np.asarray(self.sensor_prior_cov, dtype=float)
        if cov.ndim == 2:
            cov = np.broadcast_to(cov, (conv["sensors_true"].shape[0], 2, 2)).copy()
        conv["sensor_prior_cov"] = cov
        for k, v in conv.items():
            object.__setattr__(self, k, v)

        n = self.sensors_true.shape[0]
        if n < 3:
            raise ValueError("need at least 3 sensors for 2-D multilateration")
        if self.sensor_prior_means.shape != (n, 2):
            raise ValueError("sensor_prior_means shape mismatch")
        if self.sensor_prior_cov.shape != (n, 2, 2):
            raise ValueError("sensor_prior_cov shape mismatch")
        if self.reference_distance != REFERENCE_DISTANCE:
            raise ValueError("reference distance is fixed at 1 m")
        if not (self.gamma_true > 0):
            raise ValueError("gamma_true must be positive")
        if not (self.delta0_sq_true >= 0):
            raise ValueError("delta0_sq_true must be non-negative")
        if not (self.gamma_prior_var > 0):
            raise ValueError("gamma_prior_var must be positive")
        if not (self.lambda_prior_shape > 0 and self.lambda_prior_rate > 0):
            raise ValueError("Gamma prior shape and rate must be positive")
        _check_spd(self.target_prior_cov, "target_prior_cov")
        for i in range(n):
            _check_spd(self.sensor_prior_cov[i], f"sensor_prior_cov[{i}]")

    @property
    def n_sensors(self) -> int:
        return self.sensors_true.shape[0]

    def with_offset_applied(self) -> "Scenario":
        """Shift all sensor coordinates by ``sensor_offset`` and reset it."""
        if not np.any(self.sensor_offset):
            return self
        return replace(
            self,
            sensors_true=self.sensors_true + self.sensor_offset,
            sensor_prior_means=self.sensor_prior_means + self.sensor_offset,
            sensor_offset=np.zeros(2),
        )


def _check_spd(m: np.ndarray, name: str) -> None:
    if m.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


@dataclass(frozen=True)
class MeasurementSet:
    """One range per sensor, index-aligned with the scenario's sensors.

    Entries may be negative under extreme noise; nothing is clamped.
    """

    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.atleast_1d(np.asarray(self.r, dtype=float)))
        if not np.all(np.isfinite(self.r)):
            raise ValueError("ranges must be finite")

    def __len__(self) -> int:
        return self.r.shape[0]


def distance(x, x_i) -> float:
    """Euclidean distance between two points (vectorized over rows of x_i)."""
    diff = np.asarray(x, dtype=float) - np.asarray(x_i, dtype=float)
    return np.linalg.norm(diff, axis=-1)


def noise_variance(d, gamma: float, delta0_sq: float):
    """Noise power at distance d: delta0_sq * (d / d0)**gamma with d0 = 1 m."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("noise variance undefined for non-positive distance")
    return delta0_sq * d**gamma


def sample_measurements(scenario: Scenario, seed: int) -> MeasurementSet:
    """Draw one range per sensor from the true positions and true channel.

    Deterministic for a given seed. delta0_sq_true = 0 yields exact ranges.
    """
    rng = np.random.default_rng(seed)
    d = distance(scenario.target_true, scenario.sensors_true)
    if np.any(d <= 0):
        raise ValueError("target coincides with a sensor")
    std = np.sqrt(noise_variance(d, scenario.gamma_true, scenario.delta0_sq_true))
    return MeasurementSet(d + rng.standard_normal(d.shape) * std)


def log_likelihood(r, x, sensors, gamma: float, lambda0: float) -> float:
    """Exact log density of the ranges given positions and channel parameters.

    Fully normalized, natural log:

        sum_i [ -0.5 ln(2 pi) + 0.5 ln(lambda0) - (gamma/2) ln d_i
                - lambda0 (r_i - d_i)^2 / (2 d_i^gamma) ]
    """
    if lambda0 <= 0:
        raise ValueError("lambda0 must be positive")
    r = _as_ranges(r)
    d = distance(x, np.atleast_2d(np.asarray(sensors, dtype=float)))
    if np.any(d <= 0):
        raise ValueError("target coincides with a sensor")
    log_d = np.log(d)
    return float(
        np.sum(
            -0.5 * LOG_2PI
            + 0.5 * math.log(lambda0)
            - 0.5 * gamma * log_d
            - lambda0 * (r - d) ** 2 / (2.0 * d**gamma)
        )
    )


def _log_normal_2d(x, mean, cov) -> float:
    diff = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("covariance must be positive definite")
    return float(-LOG_2PI - 0.5 * logdet - 0.5 * diff @ np.linalg.solve(cov, diff))


def _log_normal_scalar(z: float, mean: float, var: float) -> float:
    return -0.5 * LOG_2PI - 0.5 * math.log(var) - (z - mean) ** 2 / (2.0 * var)


def _log_gamma_pdf(z: float, shape: float, rate: float) -> float:
    if z <= 0:
        raise ValueError("Gamma density evaluated at non-positive point")
    return (
        shape * math.log(rate)
        - math.lgamma(shape)
        + (shape - 1.0) * math.log(z)
        - rate * z
    )


def log_joint(r, x, sensors, gamma: float, lambda0: float, scenario: Scenario) -> float:
    """Log of likelihood times all priors, using the scenario's hyperparameters."""
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    total = log_likelihood(r, x, sensors, gamma, lambda0)
    total += _log_normal_2d(x, scenario.target_prior_mean, scenario.target_prior_cov)
    for i in range(scenario.n_sensors):
        total += _log_normal_2d(
            sensors[i], scenario.sensor_prior_means[i], scenario.sensor_prior_cov[i]
        )
    total += _log_normal_scalar(
        gamma, scenario.gamma_prior_mean, scenario.gamma_prior_var
    )
    total += _log_gamma_pdf(
        lambda0, scenario.lambda_prior_shape, scenario.lambda_prior_rate
    )
    return total


def likelihood_grid(r, sensors, gamma, lambda0, x_range, y_range, resolution):
    """Log-likelihood on a Cartesian grid, row-major over x then y.

    Returns (xs, ys, grid) where grid[i, j] = log_likelihood at (xs[i], ys[j]).
    Cells coinciding with a sensor are masked as NaN (the density is singular
    there), matching how the surface is emitted for plotting.
    """
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    r = _as_ranges(r)
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    xs = np.linspace(x_range[0], x_range[1], resolution)
    ys = np.linspace(y_range[0], y_range[1], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)

    diff = pts[:, None, :] - sensors[None, :, :]
    d = np.linalg.norm(diff, axis=2)                    # (cells, N)
    bad = np.any(d < 1e-9, axis=1)
    d_safe = np.where(d < 1e-9, 1.0, d)
    ll = np.sum(
        -0.5 * LOG_2PI
        + 0.5 * np.log(lambda0)
        - 0.5 * gamma * np.log(d_safe)
        - lambda0 * (r[None, :] - d_safe) ** 2 / (2.0 * d_safe**gamma),
        axis=1,
    )
    ll[bad] = np.nan
    return xs, ys, ll.reshape(resolution, resolution)
