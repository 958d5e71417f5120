"""Node behaviors: the extension point for new calibrations."""

from .base import (
    CalibrationResult,
    CheckDataOutcome,
    CheckModel,
    Classification,
    CurveBehavior,
    NodeBehavior,
    ParamView,
    classify_check_data,
)
from .behaviors import (
    ReadoutThreshold,
    RabiCoarse,
    RabiFine,
    Spectroscopy,
    TwoQubitPhase,
    default_registry,
)
from .fitting import FitResult, cosine_guess, fit_cosine, fit_model, fit_scalar

__all__ = [
    "CalibrationResult",
    "CheckDataOutcome",
    "CheckModel",
    "Classification",
    "CurveBehavior",
    "FitResult",
    "NodeBehavior",
    "ParamView",
    "RabiCoarse",
    "RabiFine",
    "ReadoutThreshold",
    "Spectroscopy",
    "TwoQubitPhase",
    "classify_check_data",
    "cosine_guess",
    "default_registry",
    "fit_cosine",
    "fit_model",
    "fit_scalar",
]
