"""skglass: desk-scale verification of the high-temperature SK model.

Exact enumeration and Glauber sampling of the Sherrington-Kirkpatrick Gibbs
measure, the limiting objects of the high-temperature cavity analysis
(fixed point q, Gaussian and two-Gaussian-mixture field laws, TAP
right-hand side), and scaling experiments that measure how fast the
finite-N error statistics decay.
"""

__version__ = "0.1.0"

from .core_model import (
    AuxGaussians,
    Disorder,
    ModelParams,
    ReducedSystem,
    SpinConfig,
    cavity_field,
    derive_seed,
    drop_site,
    energy,
    local_field,
    reduce,
    sample_aux_gaussians,
    sample_disorder,
    standard_normals,
)
from .gibbs_exact import (
    DiscreteFieldLaw,
    ENUMERATION_CAP,
    EnumerationCapacityError,
    GibbsSummary,
    TStatisticMoments,
    enumerate_gibbs,
    field_law,
    gibbs_weights,
    quenched_average,
    replica_second_moments,
)
from .mcmc import (
    ChainConfig,
    ChainEstimate,
    heat_bath_probability,
    run_chain,
    sample_replicas,
)
from .theory import (
    Cosine,
    ExpLinear,
    MixturePrediction,
    Polynomial,
    Sine,
    TanhAffine,
    TestFunction,
    TheoryConstants,
    gamma_of_site,
    gaussian_cdf,
    gaussian_expectation,
    gaussian_pdf,
    mixture_density,
    mixture_expectation,
    mixture_prediction,
    mixture_tanh_closed_form,
    p_of_gamma,
    smoothed_ratio,
    solve_q,
    tap_rhs,
)
from .stats import (
    MomentEstimate,
    QuadratureRule,
    empirical_moment,
    gauss_hermite,
    ks_distance,
)
from .experiments import (
    ExperimentConfig,
    InterpolationProbe,
    ScalingReport,
    ScalingRow,
    check_fundamental_identity,
    check_interpolation_covariances,
    check_interpolation_derivative,
    check_q_minus,
    fit_scaling,
    make_interpolation_probe,
    run_cavity_clt,
    run_centered_cavity_clt,
    run_local_clt,
    run_overlap_concentration,
    run_tap_residual,
)
