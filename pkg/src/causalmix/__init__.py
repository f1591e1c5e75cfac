"""Bayesian nonparametric estimation of quantile treatment effects.

Tree-ensemble (BART) propensity scores feed Dirichlet-process mixture
models of the joint outcome/propensity distribution; conditional
distributions extracted from the mixtures are marginalized over the
confounder population to produce posterior draws of quantile treatment
effects.  The mixture machinery doubles as a standalone joint /
conditional density estimator.
"""

from .rng import RngStream
from .distributions import (
    NotPositiveDefiniteError,
    cholesky,
    gumbel_max_categorical,
    log_multivariate_gamma,
    mvnormal_logpdf,
    sample_gamma_rate,
    sample_generalized_dirichlet,
    sample_inverse_wishart,
    sample_truncated_normal,
    sample_wishart,
)
from .bart import (
    BartHyper,
    BartMcmc,
    BartPosterior,
    VariableImportance,
    fit_continuous_bart,
    fit_probit_bart,
    split_probability,
    variable_importance,
)
from .dpm import (
    BLOCKED,
    POLYA,
    DpmHyper,
    DpmMcmc,
    DpmPosterior,
    DpmState,
    blocked_step,
    default_hypers,
    init_state,
    niw_posterior,
    polya_step,
    run_mcmc,
)
from .density import (
    CDF,
    MEAN_REG,
    PDF,
    GridSpec,
    conditional_components,
    conditional_curves_blocked,
    conditional_curves_polya,
    conditional_estimate,
    credible_band,
    joint_density_average,
    joint_density_blocked,
    joint_density_polya,
)
from .diagnostics import (
    autocorrelation,
    log_likelihood,
    log_marginal_partition_posterior,
)
from .datagen import (
    SyntheticDataset,
    dunson_example,
    mix_data,
    qte_example,
    three_normals,
)
from .qte import (
    QteConfig,
    QteResult,
    PropensityPosterior,
    bayesian_bootstrap_weights,
    estimate_qte,
    marginal_cdf,
    predict_quantiles,
    quantile_from_cdf,
)

__version__ = "0.1.0"

__all__ = [
    "RngStream",
    "NotPositiveDefiniteError",
    "cholesky",
    "mvnormal_logpdf",
    "log_multivariate_gamma",
    "sample_wishart",
    "sample_inverse_wishart",
    "sample_gamma_rate",
    "sample_generalized_dirichlet",
    "sample_truncated_normal",
    "gumbel_max_categorical",
    "BartHyper",
    "BartMcmc",
    "BartPosterior",
    "VariableImportance",
    "split_probability",
    "fit_continuous_bart",
    "fit_probit_bart",
    "variable_importance",
    "BLOCKED",
    "POLYA",
    "DpmHyper",
    "DpmMcmc",
    "DpmState",
    "DpmPosterior",
    "default_hypers",
    "niw_posterior",
    "init_state",
    "blocked_step",
    "polya_step",
    "run_mcmc",
    "PDF",
    "CDF",
    "MEAN_REG",
    "GridSpec",
    "joint_density_blocked",
    "joint_density_polya",
    "joint_density_average",
    "conditional_components",
    "conditional_curves_blocked",
    "conditional_curves_polya",
    "conditional_estimate",
    "credible_band",
    "log_likelihood",
    "log_marginal_partition_posterior",
    "autocorrelation",
    "SyntheticDataset",
    "mix_data",
    "three_normals",
    "dunson_example",
    "qte_example",
    "QteConfig",
    "QteResult",
    "PropensityPosterior",
    "bayesian_bootstrap_weights",
    "marginal_cdf",
    "quantile_from_cdf",
    "estimate_qte",
    "predict_quantiles",
    "__version__",
]
