"""Model-agnostic out-of-distribution detection with combined statistical tests.

Per-example log-densities and parameter gradients of a generative model feed
one-sided test statistics (score statistic, typicality, MMD variants). Their
null distributions are calibrated on validation data, the resulting p-values
are merged with Fisher's method, and Benjamini-Hochberg turns them into
decisions with false-discovery-rate control.
"""

from .calibration import BootstrapPlan, EmpiricalCdf, build_null, default_plan, ks_uniform, p_value
from .combination import (
    CombinedScore,
    DoseKde,
    chi2_survival,
    dose_kde_combine,
    fisher_combine,
    harmonic_combine,
)
from .decision import DecisionReport, HypothesisBatch, benjamini_hochberg, error_curves
from .errors import (
    CapabilityError,
    DegenerateError,
    OodkitError,
    RecordFormatError,
    StageError,
    ValidationError,
)
from .evaluation import (
    ExperimentSpec,
    auroc,
    pearson_correlation,
    run_gaussian_failure_modes,
    run_pipeline,
)
from .fileio import read_gradient_records, write_gradient_records
from .fisher import DiagonalFim, RunningMoments, finalize_fim, whiten
from .models import (
    DiagonalGaussianModel,
    GmmModel,
    ParameterVector,
    PpcaModel,
    fit_gaussian,
    fit_gmm,
    fit_model,
    fit_ppca,
    grad_log_density,
    log_density,
    sample_dirac_zero,
    sample_truncated_normal,
)
from .statistics import (
    GradientRecord,
    RecordSet,
    StatisticKind,
    TrainingSummary,
    compute_statistics,
    consecutive_batches,
    grad_norm_statistic,
    mahalanobis_statistic,
    mmd_fisher_statistic,
    neg_log_density_statistic,
    score_statistic,
    summarize,
    typicality_statistic,
)

__version__ = "0.1.0"
