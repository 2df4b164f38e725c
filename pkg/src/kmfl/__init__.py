"""Kernel mean embeddings and mean-field limits of discrete-time multiagent control systems."""

from .estimators import KernelMeanEmbedding
from .exceptions import (
    CertificateError,
    ConfigError,
    DomainError,
    EstimationError,
    InputError,
    InvariantError,
    KmflError,
    NumericalError,
    SizeError,
)
from .kernels import (
    AugmentedKernel,
    GaussianKernel,
    InverseMultiquadricKernel,
    Kernel,
    StateBox,
    gram,
    kernel_eval,
    kernel_metric,
    make_kernel,
)
from .meanfield import (
    ConvergenceReport,
    cost_convergence,
    embedding_convergence,
    estimate_lipschitz,
    fit_rate,
    one_step_convergence,
    one_step_discrepancy,
    stage_cost_convergence,
    trajectory_bound_check,
)
from .measures import (
    AtomicMeasure,
    RkhsCombination,
    dirac,
    embedding_pairing,
    empirical,
    integrate_rkhs,
    kme_eval,
    kme_inner,
    mix,
    mmd,
    uniform_grid,
    wasserstein1,
)
from .rdp import (
    GreedyGridFeedback,
    KernelCohesionValue,
    RdpCertificate,
    VarianceValue,
    ZeroFeedback,
    greedy_feedback,
    max_alpha_meanfield,
    max_alpha_micro,
    rdp_check_meanfield,
)
from .systems import (
    MODEL_ZOO,
    KernelCohesionCost,
    SystemModel,
    VarianceCost,
    bounded_confidence,
    cucker_smale_discrete,
    linear_consensus,
)

__version__ = "0.1.0"

__all__ = [
    "AtomicMeasure",
    "AugmentedKernel",
    "CertificateError",
    "ConfigError",
    "ConvergenceReport",
    "DomainError",
    "EstimationError",
    "GaussianKernel",
    "GreedyGridFeedback",
    "InputError",
    "InvariantError",
    "InverseMultiquadricKernel",
    "Kernel",
    "KernelCohesionCost",
    "KernelCohesionValue",
    "KernelMeanEmbedding",
    "KmflError",
    "MODEL_ZOO",
    "NumericalError",
    "RdpCertificate",
    "RkhsCombination",
    "SizeError",
    "StateBox",
    "SystemModel",
    "VarianceCost",
    "VarianceValue",
    "ZeroFeedback",
    "bounded_confidence",
    "cost_convergence",
    "cucker_smale_discrete",
    "dirac",
    "embedding_convergence",
    "embedding_pairing",
    "empirical",
    "estimate_lipschitz",
    "fit_rate",
    "gram",
    "greedy_feedback",
    "integrate_rkhs",
    "kernel_eval",
    "kernel_metric",
    "kme_eval",
    "kme_inner",
    "linear_consensus",
    "make_kernel",
    "max_alpha_meanfield",
    "max_alpha_micro",
    "mix",
    "mmd",
    "one_step_convergence",
    "one_step_discrepancy",
    "rdp_check_meanfield",
    "stage_cost_convergence",
    "trajectory_bound_check",
    "uniform_grid",
    "wasserstein1",
]
