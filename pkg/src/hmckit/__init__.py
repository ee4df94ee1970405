"""Metropolis-Hastings, involutive MCMC and Hamiltonian Monte Carlo with tuning and diagnostics."""

from .adapt import (
    MassEstimate,
    StepSizeReport,
    TrajectorySuggestion,
    TuningFailed,
    WarmupResult,
    estimate_mass,
    suggest_trajectory,
    tune_step_size,
    warmup_pipeline,
)
from .diagnostics import SummaryReport, acf, ess, histogram, summarize
from .errors import (
    ConfigurationError,
    ContractViolation,
    DatasetError,
    DatasetNotFound,
    DegenerateSeriesError,
    EstimationError,
    MissingColumnError,
    MissingValueError,
    NonBinaryResponseError,
    UnsupportedConfiguration,
)
from .hamiltonian import (
    DenseMass,
    DiagonalMass,
    Divergence,
    IdentityMass,
    LeapfrogConfig,
    MassMatrix,
    PhaseState,
    gaussian_flow,
    hamiltonian,
    kinetic_energy,
    leapfrog,
    leapfrog_jacobian_logdet,
    leapfrog_trajectory,
    momentum_flip,
    sample_momentum,
)
from .hmc import ChainResult, hmc_step, ideal_hmc_chain, run_chain, run_mh_chain, run_mhgj_chain
from .kernels import (
    GaussianFlowInvolution,
    GaussianMomentum,
    LeapfrogInvolution,
    LogNormalScale,
    MomentumFlipInvolution,
    ScaleInvolution,
    mala_proposal,
    mh_step,
    mhgj_step,
    rwm_proposal,
)
from .targets import (
    GaussianTarget,
    LabeledDataset,
    LogisticPosterior,
    TargetDensity,
    check_gradient,
    load_dataset,
    load_pima,
)

__version__ = "0.1.0"
