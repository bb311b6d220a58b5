"""Context-aware quadruped locomotion: perception fusion, a stability-
trained base-command policy, and inference-time parameter-segment
selection, with a kinematic simulator for end-to-end evaluation."""
from .autodiff import Tensor, ShapeError
from .params import ParamVector, Gradient, save_checkpoint, load_checkpoint
from .encoders import ModelConfig, Observation, ProprioState, ContextState, ContextEncoder
from .objective import ObjectiveConfig, BaseCommand, StepSample, total_objective, train_policy
from .policy import CommandPolicy
from .selection import (
    SelectionConfig,
    SegmentLibrary,
    build_library,
    ScoringHead,
    select_segment,
    act_with_selection,
)
from .slipmodel import SlipModel

__all__ = [
    "Tensor", "ShapeError", "ParamVector", "Gradient",
    "save_checkpoint", "load_checkpoint",
    "ModelConfig", "Observation", "ProprioState", "ContextState",
    "ContextEncoder", "ObjectiveConfig", "BaseCommand", "StepSample",
    "total_objective", "train_policy", "CommandPolicy",
    "SelectionConfig", "SegmentLibrary", "build_library", "ScoringHead",
    "select_segment", "act_with_selection", "SlipModel",
]

__version__ = "0.1.0"
