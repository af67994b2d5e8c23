"""Stratified randomization permutation tests for subvector inference in linear regressions."""

__version__ = "0.1.0"

from .approx import IndexDiscretization, approx_sr_test, data_driven_s, discretize_index  # noqa: E402
from .comparators import ComparatorResult, f_test, hc_wald, pc_test  # noqa: E402
from .dataset import Dataset, ar_offset, load_csv, validate_rank, write_csv  # noqa: E402
from .distributions import QuantileRequest, chi2_quantile, quantile  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .inversion import ConfidenceInterval, acceptance_profile, invert_test, parse_grid  # noqa: E402
from .montecarlo import DgpSpec, generate, power_curve, strata_characteristics  # noqa: E402
from .regression import DemeanedDesign, demean_design, ols, within_demean  # noqa: E402
from .sr import TestResult, permuted_statistics, phi_alpha, sr_test, sra_test, wald_statistic  # noqa: E402
from .strata import (  # noqa: E402
    PermutationSet,
    StrataPartition,
    apply_permutation,
    diagnostics,
    log_group_size,
    partition_by_z,
    sample_permutation_set,
)
