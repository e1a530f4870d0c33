"""Reward-tilted sampling from tabular discrete diffusion models at test
time, via twisted sequential Monte Carlo with exact enumeration oracles."""

from .core import (
    ConfigError,
    DegeneracyError,
    GuardError,
    NoiseSchedule,
    ParticleSet,
    TemperSchedule,
    Vocab,
)
from .dataset import GmmComponent, GmmSpec, build_gmm_table, default_gmm_spec
from .diffusion import (
    FAMILIES,
    TabularModel,
    bayes_denoiser,
    denoiser_rows,
    load_tabular_model,
    reverse_kernel,
    save_tabular_model,
    udlm_denoiser,
)
from .eval import (
    GridDistribution,
    MetricReport,
    bootstrap_emd_bound,
    emd,
    enumerate_intermediate,
    enumerate_target,
    metrics,
    reverse_chain_marginal,
)
from .proposal import (
    PROPOSALS,
    TransitionResult,
    propose_guidance,
    propose_locally_optimal,
    propose_reverse,
    propose_taylor,
)
from .reward import (
    GMM_BOTTOM,
    GMM_TOP,
    GumbelConfig,
    RewardFn,
    estimated_reward,
    gmm_reward,
    linear_reward,
    taylor_gradient,
)
from .rng import RngStream
from .smc import (
    SmcResult,
    SmcSampler,
    StepTrace,
    effective_sample_size,
    partial_resample,
    run_smc,
    systematic_resample,
    weight_update,
)
from .config import RunConfig, parse_config

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegeneracyError",
    "GuardError",
    "NoiseSchedule",
    "ParticleSet",
    "TemperSchedule",
    "Vocab",
    "GmmComponent",
    "GmmSpec",
    "build_gmm_table",
    "default_gmm_spec",
    "FAMILIES",
    "TabularModel",
    "bayes_denoiser",
    "denoiser_rows",
    "load_tabular_model",
    "reverse_kernel",
    "save_tabular_model",
    "udlm_denoiser",
    "GridDistribution",
    "MetricReport",
    "bootstrap_emd_bound",
    "emd",
    "enumerate_intermediate",
    "enumerate_target",
    "metrics",
    "reverse_chain_marginal",
    "PROPOSALS",
    "TransitionResult",
    "propose_guidance",
    "propose_locally_optimal",
    "propose_reverse",
    "propose_taylor",
    "GMM_BOTTOM",
    "GMM_TOP",
    "GumbelConfig",
    "RewardFn",
    "estimated_reward",
    "gmm_reward",
    "linear_reward",
    "taylor_gradient",
    "RngStream",
    "SmcResult",
    "SmcSampler",
    "StepTrace",
    "effective_sample_size",
    "partial_resample",
    "run_smc",
    "systematic_resample",
    "weight_update",
    "RunConfig",
    "parse_config",
    "__version__",
]
