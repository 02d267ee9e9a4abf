"""Finite-width two-layer random networks versus their Gaussian-process limit.

Submodules:

* :mod:`.hermite` -- Hermite expansions of activations, truncation and tails.
* :mod:`.features` -- polynomial feature embeddings and their Gaussian covariance.
* :mod:`.process` -- network and Gaussian-process sampling on the sphere.
* :mod:`.transport` -- squared 2-Wasserstein estimators and bound evaluators.
* :mod:`.harness` -- configs, rate experiments, audits and CSV reports.
"""

from .features import (
    CovarianceOperator,
    FeatureBasis,
    FeatureVector,
    covariance_analytic,
    covariance_empirical,
    embed_point,
    embed_points,
    polynomial_variance_derivative_expansion,
    polynomial_variance_moments,
    q_form,
    sharpness_polynomial,
    spectrum,
    truncate_spectrum,
)
from .harness import (
    ExperimentConfig,
    RateFit,
    fit_loglog_slope,
    run_bound_audit,
    run_coefficient_table,
    run_rate_experiment,
)
from .hermite import (
    Activation,
    HermiteExpansion,
    hermite_eval,
    hermite_expansion,
    relu_coefficient_closed_form,
    remainder,
    tanh_decay_fit,
    truncated_polynomial,
)
from .process import (
    KernelMatrix,
    NetworkDraw,
    ProcessMarginalSample,
    coupled_l2_discrepancy,
    draw_network,
    evaluate_network,
    feature_sum_sample,
    nngp_kernel,
    sample_gp_marginal,
    sample_marginal,
    sphere_sample,
)
from .transport import (
    BoundSpec,
    TransportEstimate,
    bonis_rhs,
    bound_theorem31,
    bound_theorem34,
    bound_theorem51,
    marginal_transport_estimate,
    sinkhorn_divergence,
    w2_1d,
    w2_exact,
    w2_gaussian,
)

__version__ = "0.1.0"
