"""Mean-field message passing for joint localization and channel estimation.

The posterior over (target position, sensor positions, path loss exponent
gamma, reference noise precision lambda0) is approximated by a product of
independent factors: Gaussians for positions and gamma, a Gamma distribution
for lambda0. Each sweep refreshes every factor from two messages expressed in
natural-parameter form: a fixed one from its prior and one from the ranges,
the latter rebuilt per sweep from first-order linearizations at the current
means. Point estimates are the factor means.

Update order within a sweep is gamma, lambda0, target, then each sensor, with
each update seeing the factors already refreshed this sweep (Gauss-Seidel).
The loop stops when the summed parameter drift between consecutive sweeps
falls below the threshold.

Two known corrections to the source construction are applied by default and
can be disabled with ``paper_literal_ux`` / the conjugate lambda0 form (see
``update_lambda``): the log-determinant gradient enters the position updates
with coefficient 1/2 rather than scaled by lambda0, and the Gamma factor is
updated by conjugacy (shape a + N/2, rate b + misfit) rather than by the
printed assignment, which can go negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linearization import gamma_linearize, position_linearize
from .model import Scenario, _as_ranges, distance


class DivergenceError(RuntimeError):
    """Raised when the target belief leaves the plausible region of its prior."""


@dataclass(frozen=True)
class ScalarGaussianBelief:
    mean: float
    var: float

    def __post_init__(self):
        if not (self.var > 0):
            raise ValueError("variance must be positive")


@dataclass(frozen=True)
class GammaBelief:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class GaussianBelief2D:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if self.mean.shape != (2,) or self.cov.shape != (2, 2):
            raise ValueError("belief must be 2-dimensional")
        if not np.allclose(self.cov, self.cov.T, rtol=0.0, atol=1e-9 * max(1.0, abs(self.cov).max())):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(self.cov).min() <= 0:
            raise ValueError("covariance must be positive definite")


@dataclass(frozen=True)
class PosteriorState:
    """The full variational state after a given number of sweeps."""

    target: GaussianBelief2D
    sensors: tuple
    gamma: ScalarGaussianBelief
    lambda0: GammaBelief
    iteration: int = 0
    convergence_metric: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))

    @property
    def sensor_means(self) -> np.ndarray:
        return np.array([s.mean for s in self.sensors])

    def distances(self) -> np.ndarray:
        d = distance(self.target.mean, self.sensor_means)
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ValueError("degenerate target/sensor distance in state")
        return d


@dataclass(frozen=True)
class NaturalStatsPair:
    """Natural parameters of an exponential-family message.

    ``eta1`` multiplies the linear sufficient statistic, ``eta2`` the
    quadratic one in the negated-half-precision convention, so a Gaussian
    with mean m and variance v carries (m/v, -1/(2v)).
    """

    eta1: object
    eta2: object


@dataclass(frozen=True)
class RunOptions:
    max_iter: int = 20
    threshold: float = 1e-3
    paper_literal_ux: bool = False
    # Abort when the target mean drifts this many prior standard deviations
    # from the prior mean; None disables the guard.
    divergence_mahalanobis: float | None = 8.0


def initial_state(scenario: Scenario) -> PosteriorState:
    """Beliefs initialized at the scenario priors (iteration 0)."""
    return PosteriorState(
        target=GaussianBelief2D(scenario.target_prior_mean, scenario.target_prior_cov),
        sensors=tuple(
            GaussianBelief2D(scenario.sensor_prior_means[i], scenario.sensor_prior_cov[i])
            for i in range(scenario.n_sensors)
        ),
        gamma=ScalarGaussianBelief(scenario.gamma_prior_mean, scenario.gamma_prior_var),
        lambda0=GammaBelief(scenario.lambda_prior_shape, scenario.lambda_prior_rate),
    )


def _gamma_range_message(state: PosteriorState, r: np.ndarray) -> NaturalStatsPair:
    """Natural statistics the ranges contribute to the gamma factor."""
    d = state.distances()
    lam = state.lambda0.mean
    lin = gamma_linearize(r, d, state.gamma.mean)
    log_d = np.log(d)
    a_gamma = float(np.sum(lin.delta_gamma**2) * lam)
    theta = state.gamma.mean * lam - lin.g * lam - 0.25 * log_d
    u_gamma = float(np.sum(lin.delta_gamma**2 * theta))
    return NaturalStatsPair(eta1=u_gamma, eta2=-0.5 * a_gamma)


def update_gamma(
    state: PosteriorState, r, prior: ScalarGaussianBelief
) -> ScalarGaussianBelief:
    """Refresh the path-loss-exponent factor from its prior and the ranges."""
    msg = _gamma_range_message(state, _as_ranges(r))
    eta1 = prior.mean / prior.var + msg.eta1
    eta2 = -0.5 / prior.var + msg.eta2
    var = -0.5 / eta2
    return ScalarGaussianBelief(mean=var * eta1, var=var)


def update_lambda(state: PosteriorState, r, prior: GammaBelief) -> GammaBelief:
    """Conjugate refresh of the noise-precision factor.

    The ranges contribute the sufficient-statistic pair (N/2 on the log term,
    minus the accumulated standardized misfit on the linear term), so the
    posterior is Gamma(a + N/2, b + misfit). The misfit is evaluated at the
    current means. Note the source text assigns the misfit to the shape and
    N/2 to the rate, which can drive the shape negative; the conjugate
    pairing used here is validated against direct quadrature.
    """
    r = _as_ranges(r)
    if r.size == 0:
        return prior
    d = state.distances()
    misfit = float(np.sum((r - d) ** 2 / (2.0 * d**state.gamma.mean)))
    return GammaBelief(shape=prior.shape + r.size / 2.0, rate=prior.rate + misfit)


def _position_range_message(
    state: PosteriorState, r: np.ndarray, paper_literal_ux: bool
) -> NaturalStatsPair:
    """Natural statistics the ranges contribute to the target factor."""
    lin = position_linearize(
        state.target.mean, state.sensor_means, r, state.gamma.mean
    )
    lam = state.lambda0.mean
    gram = lin.resid_grad.T @ lin.resid_grad
    a_x = lam * gram
    u_x = lam * (gram @ state.target.mean) - lam * (lin.resid_grad.T @ lin.upsilon)
    if paper_literal_ux:
        u_x = u_x + lam * lin.omega.sum(axis=0)
    else:
        u_x = u_x - 0.5 * lin.omega.sum(axis=0)
    return NaturalStatsPair(eta1=u_x, eta2=-0.5 * a_x)


def _combine_gaussian_2d(
    msg: NaturalStatsPair, prior: GaussianBelief2D
) -> GaussianBelief2D:
    prior_prec = np.linalg.inv(prior.cov)
    prec = -2.0 * np.asarray(msg.eta2) + prior_prec
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (np.asarray(msg.eta1) + prior_prec @ prior.mean)
    return GaussianBelief2D(mean=mean, cov=cov)


def update_target(
    state: PosteriorState, r, prior: GaussianBelief2D, paper_literal_ux: bool = False
) -> GaussianBelief2D:
    """Refresh the target-position factor from its prior and the ranges."""
    r = _as_ranges(r)
    if r.size == 0:
        return prior
    msg = _position_range_message(state, r, paper_literal_ux)
    return _combine_gaussian_2d(msg, prior)


def update_sensor(
    state: PosteriorState,
    i: int,
    r,
    prior_i: GaussianBelief2D,
    paper_literal_ux: bool = False,
) -> GaussianBelief2D:
    """Refresh sensor i's position factor; gradients are the target-side ones
    negated, since only measurement i involves x_i."""
    r = _as_ranges(r)
    lin = position_linearize(
        state.target.mean, state.sensors[i].mean, r[i], state.gamma.mean
    )
    lam = state.lambda0.mean
    grad = lin.resid_grad[0]
    gram = np.outer(grad, grad)
    x_i = state.sensors[i].mean
    u_i = lam * (gram @ x_i) + lam * lin.upsilon[0] * grad
    if paper_literal_ux:
        u_i = u_i - lam * lin.omega[0]
    else:
        u_i = u_i + 0.5 * lin.omega[0]
    msg = NaturalStatsPair(eta1=u_i, eta2=-0.5 * lam * gram)
    return _combine_gaussian_2d(msg, prior_i)


def convergence_metric(current: PosteriorState, previous: PosteriorState) -> float:
    """Summed squared drift of the point estimates between two sweeps.

    Positions contribute absolutely (m^2), gamma absolutely, and lambda0
    relatively (its scale is the inverse noise power, orders of magnitude
    above the rest).
    """
    drift = float(np.sum((current.target.mean - previous.target.mean) ** 2))
    for cs, ps in zip(current.sensors, previous.sensors):
        drift += float(np.sum((cs.mean - ps.mean) ** 2))
    drift += (current.gamma.mean - previous.gamma.mean) ** 2
    drift += (
        (current.lambda0.mean - previous.lambda0.mean) / previous.lambda0.mean
    ) ** 2
    return drift


def _check_divergence(
    state: PosteriorState, priors: PosteriorState, limit: float | None
) -> None:
    if limit is None:
        return
    diff = state.target.mean - priors.target.mean
    maha_sq = float(diff @ np.linalg.solve(priors.target.cov, diff))
    if not math.isfinite(maha_sq) or maha_sq > limit**2:
        raise DivergenceError(
            f"target mean drifted {math.sqrt(max(maha_sq, 0.0)):.1f} prior standard "
            f"deviations from the prior mean (limit {limit})"
        )


def run_jlce(priors: PosteriorState, r, options: RunOptions | None = None) -> list:
    """Iterate the four factor updates until the drift falls below threshold.

    Returns the full trajectory of states; the last element is the answer and
    point estimates are the factor means. Domain errors inside an update
    abort the run with the iteration (and sensor index, where applicable)
    attached.
    """
    options = options or RunOptions()
    r = _as_ranges(r)
    state = replace(priors, iteration=0, convergence_metric=math.inf)
    trajectory = [state]
    for it in range(1, options.max_iter + 1):
        prev = state
        try:
            gamma = update_gamma(state, r, priors.gamma)
            state = replace(state, gamma=gamma)
            lam = update_lambda(state, r, priors.lambda0)
            state = replace(state, lambda0=lam)
            target = update_target(state, r, priors.target, options.paper_literal_ux)
            state = replace(state, target=target)
        except ValueError as exc:
            raise ValueError(f"iteration {it}: {exc}") from exc
        sensors = list(state.sensors)
        for i in range(len(sensors)):
            try:
                sensors[i] = update_sensor(
                    state, i, r, priors.sensors[i], options.paper_literal_ux
                )
            except ValueError as exc:
                raise ValueError(f"iteration {it}, sensor {i}: {exc}") from exc
            state = replace(state, sensors=tuple(sensors))
        metric = convergence_metric(state, prev)
        state = replace(state, iteration=it, convergence_metric=metric)
        _check_divergence(state, priors, options.divergence_mahalanobis)
        trajectory.append(state)
        if metric < options.threshold:
            break
    return trajectory
