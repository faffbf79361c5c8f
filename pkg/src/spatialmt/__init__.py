"""Spatial multiple testing with neighborhood-augmented statistics.

The testing procedure rejects a location when its own standardized
statistic and a pooled neighborhood statistic both clear a pair of
cutoffs, chosen to maximize the rejection count subject to an estimated
false discovery proportion staying below the nominal level. Auxiliary
machinery covers covariance model fitting, the nonparametric mixing
distribution of the neighborhood statistic, baseline procedures, and a
simulation laboratory.
"""

from .covmodel import (KernelSpec, StatParams, derive_stat_params,
                       fit_covariance_mle, fit_residual_kernel,
                       kernel_eval, kernel_from_mapping, kernel_matrix,
                       kernel_to_mapping)
from .errors import DataFormatError, FitError
from .gaussnum import big_l, bvn_upper, std_normal_cdf, std_normal_quantile
from .geometry import (NeighborhoodMap, NpebSubset, SpatialDomain,
                       adaptive_neighborhoods, knn_neighborhoods,
                       select_npeb_subset)
from .npeb import (MixingDistribution, expected_false_rejections, fit_gmle,
                   marginal_density)
from .simlab import (NOISE_KERNELS, PROCEDURES, GroundTruth, SetupConfig,
                     evaluate, generate_setup, run_replications, sample_gp)
from .statbuild import (RegressionFit, StatPair, build_regression_statistics,
                        build_statistics, read_direct_csv, read_panel_csv)
from .testing import (DecisionResult, FdpEstimatorConfig, apply_rejections,
                      bh_procedure, decision_record, estimate_fdp,
                      groupwise_pi0, one_d_threshold, search_cutoffs_2d,
                      storey_bh, storey_pi0, weight_scheme,
                      write_rejections_csv)

__version__ = "0.1.0"

__all__ = [
    "DataFormatError", "FitError",
    "std_normal_cdf", "std_normal_quantile", "bvn_upper", "big_l",
    "SpatialDomain", "NeighborhoodMap", "NpebSubset",
    "knn_neighborhoods", "adaptive_neighborhoods", "select_npeb_subset",
    "KernelSpec", "StatParams", "kernel_eval", "kernel_matrix",
    "fit_covariance_mle", "fit_residual_kernel", "derive_stat_params",
    "kernel_to_mapping", "kernel_from_mapping",
    "StatPair", "RegressionFit", "build_statistics",
    "build_regression_statistics", "read_direct_csv", "read_panel_csv",
    "MixingDistribution", "fit_gmle", "marginal_density",
    "expected_false_rejections",
    "FdpEstimatorConfig", "DecisionResult", "estimate_fdp",
    "one_d_threshold", "search_cutoffs_2d", "apply_rejections",
    "storey_pi0", "groupwise_pi0", "weight_scheme",
    "bh_procedure", "storey_bh", "write_rejections_csv", "decision_record",
    "SetupConfig", "GroundTruth", "NOISE_KERNELS", "PROCEDURES",
    "generate_setup", "sample_gp", "evaluate", "run_replications",
    "__version__",
]
