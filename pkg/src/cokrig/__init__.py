"""Multivariate geostatistics toolkit: valid cross-covariance construction
(conditional, spatial random effects, kernel convolution, LMC), parameter
estimation, and measurement-error-filtered co-kriging."""

__version__ = "0.1.0"

from .data import (
    Location,
    LocationSet,
    MultivariateDataset,
    VariableSeries,
    collocation_report,
    load_dataset,
    make_grid,
    save_dataset,
)
from .kernels import (
    BasisSet,
    CorrelationFunction,
    CovarianceFunction,
    MaternParams,
    NndCertificate,
    bisquare_basis,
    check_nnd,
    eval_cov_matrix,
    matern_cov,
)
from .construction import (
    ConditionalModel,
    CovMatrixBundle,
    DiracKernel,
    DistanceDecayCoupling,
    ExplicitCoupling,
    GaussianKernel,
    KernelConvModel,
    LmcModel,
    QuadratureSpec,
    ScalarCoupling,
    SreModel,
    assemble_bundle,
    conditional_joint_cov,
    conditional_joint_from_matrices,
    kernel_conv_cross_cov,
    simulate_field,
    sre_cross_cov,
)
from .hierarchical import (
    HierarchicalModel,
    MeasurementErrorSpec,
    MicroScaleSpec,
    assemble_data_cov,
    origin_gap,
)
from .estimation import (
    ConditionalScalarFamily,
    EmpiricalSummary,
    FitResult,
    LagBins,
    LmcFamily,
    MaternFamily,
    SreFamily,
    empirical_cross_cov,
    fit_ml,
    fit_wls,
    information_criteria,
    pseudo_cross_variogram,
)
from .prediction import (
    PredictionSet,
    PredictionTarget,
    ValidationReport,
    cokrige,
    crps_gaussian,
    cross_validate,
    gaussian_conditioning_oracle,
)
from .estimators import CoKriging
from .exceptions import CokrigError, ConfigError, DataError, NumericalError

__all__ = [name for name in dir() if not name.startswith("_")]
