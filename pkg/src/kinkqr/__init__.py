"""Multi-kink quantile regression.

Estimation of continuous piecewise-linear conditional quantile functions with
an unknown number of kink points, kink-count selection through a strengthened
quantile BIC, a score test for the existence of kink effects with
wild-bootstrap p-values, and Wald / bootstrap / rank-score confidence
intervals for the kink locations.
"""

from .errors import (
    BandwidthError,
    ConvergenceError,
    DegenerateBootstrapError,
    KinkQrError,
    RankError,
    UsageError,
)
from .linqr import (
    DensityWeights,
    DesignMatrix,
    QrSolution,
    QuantileLevel,
    bandwidth,
    check_loss,
    density_weights,
    fit_linear_qr,
    psi,
)
from .model import (
    Dataset,
    MkqrParams,
    SegmentForm,
    build_design,
    from_segment_form,
    objective,
    predict_quantile,
    to_segment_form,
)
from .brisq import (
    BrisqSettings,
    InadmissibleReport,
    ThetaEstimate,
    brisq_fit,
    init_kinks,
    iterate_segmented,
    linearized_step,
)
from .kselect import FitReport, SbicTrace, backward_eliminate, sbic
from .infer import (
    CovarianceEstimate,
    IntervalSet,
    KinkInterval,
    KinkTestResult,
    ScoreGrid,
    bootstrap_ci,
    covariance,
    score_statistic,
    srs_invert_ci,
    srs_statistic,
    wald_ci,
    wild_bootstrap_pvalue,
)
from .simgen import ScenarioSpec, TrueTheta, generate, true_theta_at

__version__ = "0.1.0"

__all__ = [
    "BandwidthError",
    "BrisqSettings",
    "ConvergenceError",
    "CovarianceEstimate",
    "Dataset",
    "DegenerateBootstrapError",
    "DensityWeights",
    "DesignMatrix",
    "FitReport",
    "InadmissibleReport",
    "IntervalSet",
    "KinkInterval",
    "KinkQrError",
    "KinkTestResult",
    "MkqrParams",
    "QrSolution",
    "QuantileLevel",
    "RankError",
    "SbicTrace",
    "ScenarioSpec",
    "ScoreGrid",
    "SegmentForm",
    "ThetaEstimate",
    "TrueTheta",
    "UsageError",
    "backward_eliminate",
    "bandwidth",
    "bootstrap_ci",
    "brisq_fit",
    "build_design",
    "check_loss",
    "covariance",
    "density_weights",
    "fit_linear_qr",
    "from_segment_form",
    "generate",
    "init_kinks",
    "iterate_segmented",
    "linearized_step",
    "objective",
    "predict_quantile",
    "psi",
    "sbic",
    "score_statistic",
    "srs_invert_ci",
    "srs_statistic",
    "to_segment_form",
    "true_theta_at",
    "wald_ci",
    "wild_bootstrap_pvalue",
]
