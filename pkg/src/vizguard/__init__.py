"""vizguard: rule-guarded multi-agent chart generation and evaluation."""

from .chartspec import (
    ChartSpec,
    DataTable,
    FeatureBundle,
    ParseFailure,
    ValidationReport,
    canonicalize,
    extract_features,
    parse_spec,
    validate_spec,
)
from .evaluator import (
    CombinedScore,
    EvaluationReport,
    PerceptualScores,
    StructuralScores,
    WeightVector,
    aggregate_layer,
    combine_scores,
    score_perceptual,
    score_structural,
)
from .orchestrator import RunConfig, SystemState, TaskOutcome, run_task
from .rules import TaskInput, TaskType, cr_classify_task

__version__ = "0.1.0"

__all__ = [
    "ChartSpec",
    "CombinedScore",
    "DataTable",
    "EvaluationReport",
    "FeatureBundle",
    "ParseFailure",
    "PerceptualScores",
    "RunConfig",
    "StructuralScores",
    "SystemState",
    "TaskInput",
    "TaskOutcome",
    "TaskType",
    "ValidationReport",
    "WeightVector",
    "aggregate_layer",
    "canonicalize",
    "combine_scores",
    "cr_classify_task",
    "extract_features",
    "parse_spec",
    "run_task",
    "score_perceptual",
    "score_structural",
    "validate_spec",
    "__version__",
]
