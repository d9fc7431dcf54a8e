"""Services package for VolMate."""

from core.services.training_service import (
    TrainingService,
    TrainState,
    training_service,
    save_checkpoint,
    load_checkpoint,
    model_from_checkpoint
)
from core.services.evaluation_service import (
    EvaluationService,
    EvalReport,
    Prediction,
    evaluation_service
)

__all__ = [
    "TrainingService",
    "TrainState",
    "training_service",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "EvaluationService",
    "EvalReport",
    "Prediction",
    "evaluation_service"
]
