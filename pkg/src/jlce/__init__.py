"""Joint localization and channel estimation with distance-dependent noise."""

from .model import (
    MeasurementSet,
    Scenario,
    distance,
    likelihood_grid,
    log_joint,
    log_likelihood,
    noise_variance,
    sample_measurements,
)
from .linearization import (
    GammaLinearization,
    PositionLinearization,
    gamma_linearize,
    position_linearize,
)
from .vmp import (
    DivergenceError,
    GammaBelief,
    GaussianBelief2D,
    NaturalStatsPair,
    PosteriorState,
    RunOptions,
    ScalarGaussianBelief,
    convergence_metric,
    initial_state,
    run_jlce,
    update_gamma,
    update_lambda,
    update_sensor,
    update_target,
)
from .bcrb import (
    FimMatrix,
    bayesian_fim,
    bcrb_x,
    block_deltas,
    fim_measurement_closed,
    fim_measurement_mc,
    fim_prior_blocks,
    taylor_expectation,
)
from .oracle import (
    GaussNewtonDivergence,
    GridSpec,
    QuadratureError,
    gamma_posterior_quadrature,
    gauss_newton_ml,
    grid_map,
    lambda_posterior_quadrature,
)
from .harness import ExperimentConfig, ResultRow, ResultTable, rmse, run_trials, sweep

__version__ = "0.1.0"
