"""Gradient-free Bayesian inversion toolkit.

Annealed ensemble Kalman updates driven by an effective-sample-size
temperature schedule, with an optional normalizing-flow preconditioner
that performs the updates in a Gaussianized latent space. Ships two
benchmark inverse problems, a Hamiltonian Monte Carlo reference sampler,
and a 1-Wasserstein evaluation harness.
"""

from .annealing import AnnealingRecord, AnnealingState, compute_misfits, ess_at, next_beta
from .drivers import RunConfig, RunReport, evaluate_forward_parallel, run_eki, run_faki
from .ensemble import (
    Ensemble,
    KalmanCrossCovariances,
    NoiseModel,
    empirical_cross_covariances,
    kalman_update,
    perturb_observations,
)
from .flow import (
    FlowModel,
    FlowTrainConfig,
    Standardizer,
    fit_flow,
    flow_forward,
    flow_inverse,
    load_flow,
    nll_and_gradient,
    save_flow,
)
from .hmc import ChainOutput, HmcConfig, integrated_autocorr_times, run_hmc, thin_chain
from .metrics import (
    AggregateReport,
    MetricReport,
    MomentTable,
    aggregate,
    moment_comparison,
    wasserstein1,
)
from .models import (
    ForwardModel,
    generate_lorenz_data,
    generate_rosenbrock_data,
    lorenz_forward,
    lorenz_prior_sample,
    make_linear_gaussian,
    make_lorenz,
    make_rosenbrock,
    rosenbrock_forward,
)

__version__ = "0.1.0"

__all__ = [
    "AnnealingRecord",
    "AnnealingState",
    "compute_misfits",
    "ess_at",
    "next_beta",
    "RunConfig",
    "RunReport",
    "evaluate_forward_parallel",
    "run_eki",
    "run_faki",
    "Ensemble",
    "KalmanCrossCovariances",
    "NoiseModel",
    "empirical_cross_covariances",
    "kalman_update",
    "perturb_observations",
    "FlowModel",
    "FlowTrainConfig",
    "Standardizer",
    "fit_flow",
    "flow_forward",
    "flow_inverse",
    "load_flow",
    "nll_and_gradient",
    "save_flow",
    "ChainOutput",
    "HmcConfig",
    "integrated_autocorr_times",
    "run_hmc",
    "thin_chain",
    "AggregateReport",
    "MetricReport",
    "MomentTable",
    "aggregate",
    "moment_comparison",
    "wasserstein1",
    "ForwardModel",
    "generate_lorenz_data",
    "generate_rosenbrock_data",
    "lorenz_forward",
    "lorenz_prior_sample",
    "make_linear_gaussian",
    "make_lorenz",
    "make_rosenbrock",
    "rosenbrock_forward",
    "__version__",
]
