"""Delayed-feedback conversion modeling.

Conversion labels arrive late: a model trained at time T sees clicks that
will convert after T as negatives. This package trains BCE models on such
logs and then corrects the trained parameters directly, by solving a
damped Hessian system for the effect of reversing stale labels and
integrating newly arrived samples, instead of retraining from scratch.
"""

from .data import (
    Dataset,
    LabelView,
    Observed,
    Oracle,
    Retrain,
    Sample,
    SyntheticConfig,
    arrival_set,
    generate_synthetic,
    label_of,
    labels_of,
    load_csv,
    reversal_set,
    save_csv,
    temporal_split,
)
from .errors import ConfigError, DataFormatError, DfcvrError, NumericalError
from .harness import (
    ExperimentConfig,
    compare_solvers,
    run_offline,
    run_online,
    run_timing,
)
from .influence import (
    InfluenceRequest,
    UpdateReport,
    apply_update,
    build_rhs,
    delta_total,
)
from .metrics import EvalReport, MethodMetrics, auc, log_loss, prauc, ri
from .models import (
    LogisticRegression,
    Mlp,
    ModelSpec,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .solvers import (
    DampedHessianOperator,
    MatrixOperator,
    QuadraticObjective,
    SolveResult,
    SolverConfig,
    SolverError,
    SolverNotConvergedError,
    cg_solve,
    neumann_solve,
    power_iteration,
    sq_solve,
)
from .training import TrainConfig, TrainingDivergedError, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "DfcvrError",
    "DampedHessianOperator",
    "EvalReport",
    "ExperimentConfig",
    "InfluenceRequest",
    "LabelView",
    "LogisticRegression",
    "MatrixOperator",
    "MethodMetrics",
    "Mlp",
    "ModelSpec",
    "NumericalError",
    "Observed",
    "Oracle",
    "QuadraticObjective",
    "Retrain",
    "Sample",
    "SolveResult",
    "SolverConfig",
    "SolverError",
    "SolverNotConvergedError",
    "SyntheticConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "UpdateReport",
    "apply_update",
    "arrival_set",
    "auc",
    "build_rhs",
    "cg_solve",
    "compare_solvers",
    "delta_total",
    "generate_synthetic",
    "label_of",
    "labels_of",
    "load_checkpoint",
    "load_csv",
    "log_loss",
    "neumann_solve",
    "power_iteration",
    "prauc",
    "predict",
    "reversal_set",
    "ri",
    "run_offline",
    "run_online",
    "run_timing",
    "save_checkpoint",
    "save_csv",
    "sq_solve",
    "temporal_split",
    "train",
]
