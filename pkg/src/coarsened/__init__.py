"""Stratified causal effect estimation with coarsened, k-means and random-forest strata."""

__version__ = "0.1.0"

from .cem import (CategoricalGrouping, CategoricalIdentity, Cutpoints, EqualWidth, PruneReport,
                  coarsen, coarsen_column, exact_match_strata, prune)
from .dataset import (UNASSIGNED, ColumnSpec, Dataset, StrataAssignment, compact_strata,
                      load_csv, read_schema, standardize)
from .errors import ConfigError, DataError, NumericError
from .estimator import (Estimate, StratumSummary, estimate, estimate_ace, estimate_acet,
                        estimating_function, summarize_strata, wald_inference)
from .extrapolation import ExtrapolationResult, GridPoint, ols_intercept_at_zero, run_grid
from .kmeans import KMeansConfig, KMeansFit, fit_kmeans, quantization_error
from .stratify import CEMMethod, KMeansMethod, RFMethod, stratify
