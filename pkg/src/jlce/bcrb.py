"""Bayesian Fisher information and the position error bound.

The information matrix over Theta = [x, x_1..x_N, gamma, lambda0] splits into
a prior part (exact: inverse covariances for the Gaussian blocks, curvature
of the Gamma log-density for lambda0) and a measurement part. For a Gaussian
measurement whose mean is the distance d and whose variance is d**gamma /
lambda0, the per-sensor information conditional on Theta has the standard
mean/variance-derivative closed form; what remains is the expectation over
the priors, approximated coordinate-wise by a second-order Taylor rule.

Two closed-form blocks follow printed expressions that differ from the score
derivation in the sign of a (numerically small) term: the cross information
between target and sensor uses weight (lambda0 d**-gamma - gamma^2/(2 d^2))
rather than a plus sign on the second term, and the target/precision cross
block enters with positive sign. Both are kept as printed; the Monte Carlo
estimator below is the arbiter, and per-block deltas can be reported with
``block_deltas``.

Caveat on the Monte Carlo path: with gamma >= 2 and a position prior broad
enough to overlap a sensor location, E[d**-gamma] does not exist (the
near-singular region contributes a divergent integral). Sampled estimates of
the position blocks are then dominated by the closest draws and grow with
the sample count instead of converging; the Taylor closed form stays finite
because it only probes local curvature at the prior means. Comparisons are
meaningful only where the position priors keep clear of the sensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Scenario

_MC_MIN_DISTANCE = 1e-6
_MC_BATCH = 20000


def taylor_expectation(f, mean: float, variance: float) -> float:
    """E[f(Z)] for Z ~ (mean, variance) by a second-order expansion.

    The second derivative is taken by central differences with step
    1e-5 * max(1, |mean|). Exact for quadratics.
    """
    h = 1e-5 * max(1.0, abs(mean))
    fm, fp, f0 = f(mean - h), f(mean + h), f(mean)
    out = f0 + 0.5 * (fp - 2.0 * f0 + fm) / h**2 * variance
    if not np.all(np.isfinite(np.asarray(out, dtype=float))):
        raise FloatingPointError("non-finite evaluation in taylor_expectation")
    return out


def _taylor_expectation_multi(f, means, variances):
    """Coordinate-wise second-order expectation of a (possibly matrix-valued)
    function of several independent scalar coordinates."""
    means = np.asarray(means, dtype=float)
    base = np.asarray(f(means), dtype=float)
    out = base.copy()
    for j, v in enumerate(variances):
        if v == 0.0:
            continue
        h = 1e-5 * max(1.0, abs(means[j]))
        up = means.copy()
        up[j] += h
        dn = means.copy()
        dn[j] -= h
        second = (np.asarray(f(up), float) - 2.0 * base + np.asarray(f(dn), float)) / h**2
        out = out + 0.5 * second * v
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite evaluation in Taylor expectation")
    return out


@dataclass(frozen=True)
class FimMatrix:
    """Dense symmetric information matrix, ordered [x, x_1..x_N, gamma, lambda0]."""

    matrix: np.ndarray
    n_sensors: int

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        dim = 2 * self.n_sensors + 4
        if self.matrix.shape != (dim, dim):
            raise ValueError("information matrix has the wrong dimension")

    @property
    def j_x(self) -> np.ndarray:
        return self.matrix[:2, :2]

    @property
    def j_x_rest(self) -> np.ndarray:
        """Cross block between the nuisance stack and the target, (2N+2) x 2."""
        return self.matrix[2:, :2]

    @property
    def j_rest(self) -> np.ndarray:
        return self.matrix[2:, 2:]

    def __add__(self, other: "FimMatrix") -> "FimMatrix":
        if self.n_sensors != other.n_sensors:
            raise ValueError("sensor counts differ")
        return FimMatrix(self.matrix + other.matrix, self.n_sensors)


def fim_prior_blocks(scenario: Scenario) -> FimMatrix:
    """Information carried by the priors alone."""
    n = scenario.n_sensors
    dim = 2 * n + 4
    j = np.zeros((dim, dim))
    j[:2, :2] = np.linalg.inv(scenario.target_prior_cov)
    for i in range(n):
        sl = slice(2 + 2 * i, 4 + 2 * i)
        j[sl, sl] = np.linalg.inv(scenario.sensor_prior_cov[i])
    j[2 + 2 * n, 2 + 2 * n] = 1.0 / scenario.gamma_prior_var
    a, b = scenario.lambda_prior_shape, scenario.lambda_prior_rate
    # Gamma-prior curvature (a-1)/lambda0^2, averaged under the prior itself.
    j[3 + 2 * n, 3 + 2 * n] = (a - 1.0) * taylor_expectation(
        lambda lam: lam**-2, a / b, a / b**2
    )
    return FimMatrix(j, n)


def _prior_coords(scenario: Scenario, i: int):
    """Means and variances of the six scalar coordinates entering sensor i's
    measurement: target (2), sensor i (2), gamma, lambda0."""
    means = np.concatenate(
        [
            scenario.target_prior_mean,
            scenario.sensor_prior_means[i],
            [scenario.gamma_prior_mean, scenario.lambda_prior_shape / scenario.lambda_prior_rate],
        ]
    )
    variances = np.concatenate(
        [
            np.diag(scenario.target_prior_cov),
            np.diag(scenario.sensor_prior_cov[i]),
            [
                scenario.gamma_prior_var,
                scenario.lambda_prior_shape / scenario.lambda_prior_rate**2,
            ],
        ]
    )
    return means, variances


def _geometry(theta):
    x, x_i = theta[:2], theta[2:4]
    diff = x - x_i
    d = float(np.hypot(diff[0], diff[1]))
    return diff / d, d


def fim_measurement_closed(scenario: Scenario) -> FimMatrix:
    """Measurement information with prior expectations taken by the Taylor rule."""
    n = scenario.n_sensors
    dim = 2 * n + 4
    j = np.zeros((dim, dim))
    gi, li = 2 + 2 * n, 3 + 2 * n

    def k_xx(theta):
        unit, d = _geometry(theta)
        g, lam = theta[4], theta[5]
        return np.outer(unit, unit) * (lam * d**-g + 0.5 * g * g / d**2)

    def k_xxi(theta):
        # printed cross-block weight; the score form has + on the second term
        unit, d = _geometry(theta)
        g, lam = theta[4], theta[5]
        return -np.outer(unit, unit) * (lam * d**-g - 0.5 * g * g / d**2)

    def k_xg(theta):
        # two printed terms; the 1/(2d) pieces cancel, leaving the score form
        unit, d = _geometry(theta)
        g = theta[4]
        return 0.5 / d * unit - 0.5 * (1.0 / d - g * np.log(d) / d) * unit

    def k_xl(theta):
        # printed with positive sign; the score form is its negation
        unit, d = _geometry(theta)
        g, lam = theta[4], theta[5]
        return 0.5 * g / (lam * d) * unit

    def k_gg(theta):
        _, d = _geometry(theta)
        return 0.5 * np.log(d) ** 2

    def k_gl(theta):
        _, d = _geometry(theta)
        return -np.log(d) / (2.0 * theta[5])

    def k_ll(theta):
        return 0.5 * theta[5] ** -2

    for i in range(n):
        means, variances = _prior_coords(scenario, i)
        e = lambda f: _taylor_expectation_multi(f, means, variances)
        si = slice(2 + 2 * i, 4 + 2 * i)

        xx = e(k_xx)
        j[:2, :2] += xx
        j[si, si] += xx
        cross = e(k_xxi)
        j[:2, si] += cross
        j[si, :2] += cross
        xg = e(k_xg)
        j[:2, gi] += xg
        j[gi, :2] += xg
        # sensor-side gradients are the target-side ones negated
        j[si, gi] += -xg
        j[gi, si] += -xg
        xl = e(k_xl)
        j[:2, li] += xl
        j[li, :2] += xl
        j[si, li] += -xl
        j[li, si] += -xl
        j[gi, gi] += e(k_gg)
        gl = e(k_gl)
        j[gi, li] += gl
        j[li, gi] += gl
        j[li, li] += e(k_ll)
    return FimMatrix(j, n)


def _scores(x, x_i, gamma, lam, r):
    """Analytic gradients of the range log-likelihood, stacked per sample.

    Shapes: x (m, 2), x_i (m, n, 2), gamma (m,), lam (m,), r (m, n).
    Returns (m, 2n + 4).
    """
    m, n = r.shape
    diff = x[:, None, :] - x_i
    d = np.linalg.norm(diff, axis=2)
    unit = diff / d[..., None]
    resid = r - d
    log_d = np.log(d)
    g = gamma[:, None]
    lamc = lam[:, None]
    d_pow = d**g
    # per-sensor radial weight of d ln p / dx
    radial = (
        -0.5 * g / d + lamc * resid / d_pow + 0.5 * lamc * g * resid**2 / (d_pow * d)
    )
    s_x = np.sum(radial[..., None] * unit, axis=1)
    s_xi = -(radial[..., None] * unit)
    s_gamma = np.sum(-0.5 * log_d + 0.5 * lamc * resid**2 / d_pow * log_d, axis=1)
    s_lam = 0.5 * n / lam - np.sum(resid**2 / (2.0 * d_pow), axis=1)
    out = np.empty((m, 2 * n + 4))
    out[:, :2] = s_x
    out[:, 2 : 2 + 2 * n] = s_xi.reshape(m, 2 * n)
    out[:, 2 + 2 * n] = s_gamma
    out[:, 3 + 2 * n] = s_lam
    return out


def fim_measurement_mc(scenario: Scenario, samples: int, seed: int) -> FimMatrix:
    """Monte Carlo measurement information via the score outer-product identity.

    Draws (Theta, r) from prior times likelihood and averages score outer
    products. Draws with any near-zero distance are rejected and redrawn; a
    rejection rate above 1% aborts. Deterministic for a given seed. See the
    module caveat about heavy tails when position priors overlap sensors.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    n = scenario.n_sensors
    accum = np.zeros((2 * n + 4, 2 * n + 4))
    accepted = 0
    rejected = 0
    chol_t = np.linalg.cholesky(scenario.target_prior_cov)
    chol_s = np.linalg.cholesky(scenario.sensor_prior_cov)
    while accepted < samples:
        m = min(_MC_BATCH, max(samples - accepted, 1000))
        x = scenario.target_prior_mean + rng.standard_normal((m, 2)) @ chol_t.T
        x_i = scenario.sensor_prior_means[None, :, :] + np.einsum(
            "nij,mnj->mni", chol_s, rng.standard_normal((m, n, 2))
        )
        gamma = scenario.gamma_prior_mean + rng.standard_normal(m) * np.sqrt(
            scenario.gamma_prior_var
        )
        lam = rng.gamma(scenario.lambda_prior_shape, 1.0 / scenario.lambda_prior_rate, m)
        d = np.linalg.norm(x[:, None, :] - x_i, axis=2)
        ok = np.all(d > _MC_MIN_DISTANCE, axis=1) & (gamma > 0) & (lam > 0)
        rejected += int(m - ok.sum())
        if rejected > 0.01 * (rejected + accepted + int(ok.sum())):
            raise RuntimeError(
                f"rejection rate above 1% ({rejected} rejected): "
                "degenerate prior geometry"
            )
        x, x_i, gamma, lam, d = x[ok], x_i[ok], gamma[ok], lam[ok], d[ok]
        take = min(samples - accepted, x.shape[0])
        x, x_i, gamma, lam, d = x[:take], x_i[:take], gamma[:take], lam[:take], d[:take]
        std = np.sqrt(d**gamma[:, None] / lam[:, None])
        r = d + rng.standard_normal(d.shape) * std
        s = _scores(x, x_i, gamma, lam, r)
        accum += s.T @ s
        accepted += take
    return FimMatrix(accum / accepted, n)


def bayesian_fim(
    scenario: Scenario, mc_samples: int | None = None, seed: int = 0
) -> FimMatrix:
    """Prior plus measurement information; closed form unless mc_samples set."""
    prior = fim_prior_blocks(scenario)
    if mc_samples is None:
        return prior + fim_measurement_closed(scenario)
    return prior + fim_measurement_mc(scenario, mc_samples, seed)


def bcrb_x(fim: FimMatrix) -> float:
    """Trace of the position sub-block of the inverse information matrix.

    Computed through the Schur complement of the nuisance stack; equals
    [J^-1]_11 + [J^-1]_22 of the full inverse. Units m^2.
    """
    schur = fim.j_x - fim.j_x_rest.T @ np.linalg.solve(fim.j_rest, fim.j_x_rest)
    return float(np.trace(np.linalg.inv(schur)))


def block_deltas(closed: FimMatrix, mc: FimMatrix) -> dict:
    """Relative Frobenius deltas per block, closed form versus Monte Carlo."""
    n = closed.n_sensors
    gi, li = 2 + 2 * n, 3 + 2 * n
    blocks = {
        "x,x": (slice(0, 2), slice(0, 2)),
        "x,sensors": (slice(0, 2), slice(2, 2 + 2 * n)),
        "sensors,sensors": (slice(2, 2 + 2 * n), slice(2, 2 + 2 * n)),
        "x,gamma": (slice(0, 2), slice(gi, gi + 1)),
        "x,lambda0": (slice(0, 2), slice(li, li + 1)),
        "gamma,gamma": (slice(gi, gi + 1), slice(gi, gi + 1)),
        "lambda0,lambda0": (slice(li, li + 1), slice(li, li + 1)),
    }
    out = {}
    for name, (rs, cs) in blocks.items():
        c = closed.matrix[rs, cs]
        m = mc.matrix[rs, cs]
        denom = np.linalg.norm(m)
        out[name] = float(np.linalg.norm(c - m) / denom) if denom > 0 else 0.0
    return out
