"""Adaptive borrowing of external controls for treatment-effect estimation.

The package augments a randomized trial with external control samples:
each external sample is scored by its influence on the trial-control
outcome model, nested candidate subsets are formed from the ranking, and
the subset minimizing the estimated MSE of a semiparametric combined
estimator is borrowed.  An outcome-calibration step can align external
outcomes with the trial-control law first, increasing how much can be
borrowed.  Baselines, a seeded simulation harness and a CLI are included.
"""

from .api import BorrowingEstimator, OutcomeCalibrator
from .baselines import AlbFit, alb, fb, fcb, nb
from .borrowing import BorrowResult, KGrid, adaptive_borrow, mse_curve_export, scan
from .calibration import (
    BiasFit,
    CalibratedEcs,
    acib,
    apply_calibration,
    calibrate,
    calibration_distance,
    fit_bias,
)
from .data import (
    DataSplit,
    Dataset,
    Schema,
    StandardizeRecord,
    destandardize,
    load_csv,
    split,
    standardize,
    write_csv,
)
from .estimators import EstimateReport, bias_hat, mse_hat, tau_aipw, tau_combined
from .influence import (
    InfluenceRanking,
    InfluenceScorer,
    gradient_at,
    influence_score,
    rank_and_nest,
)
from .nuisance import (
    ConstantProbability,
    LinearFit,
    LogisticFit,
    NuisanceSet,
    assemble_nuisances,
    expand_features,
    fit_linear,
    fit_logistic,
    predict_outcome,
)
from .simulation import (
    DgpConfig,
    ReplicationReport,
    generate,
    replicate,
    run_method,
    sample_truncated_normal,
    true_ate,
)
from .validation import NumericalError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "BorrowingEstimator",
    "OutcomeCalibrator",
    "Dataset",
    "DataSplit",
    "Schema",
    "StandardizeRecord",
    "load_csv",
    "write_csv",
    "standardize",
    "destandardize",
    "split",
    "LinearFit",
    "LogisticFit",
    "ConstantProbability",
    "NuisanceSet",
    "fit_linear",
    "fit_logistic",
    "predict_outcome",
    "assemble_nuisances",
    "expand_features",
    "InfluenceRanking",
    "InfluenceScorer",
    "gradient_at",
    "influence_score",
    "rank_and_nest",
    "EstimateReport",
    "tau_aipw",
    "tau_combined",
    "bias_hat",
    "mse_hat",
    "KGrid",
    "BorrowResult",
    "scan",
    "adaptive_borrow",
    "mse_curve_export",
    "BiasFit",
    "CalibratedEcs",
    "fit_bias",
    "calibrate",
    "apply_calibration",
    "acib",
    "calibration_distance",
    "AlbFit",
    "nb",
    "fb",
    "fcb",
    "alb",
    "DgpConfig",
    "ReplicationReport",
    "sample_truncated_normal",
    "generate",
    "true_ate",
    "replicate",
    "run_method",
    "ValidationError",
    "NumericalError",
    "__version__",
]
