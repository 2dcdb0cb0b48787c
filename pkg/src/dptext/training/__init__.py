from .data import build_split, load_dataset, make_batch, rotated_split, save_dataset, scene_target
from .losses import LossBreakdown, LossWeights, Target, detection_loss, layer_l1_to_matched
from .matching import MatchResult, NonFiniteCostError, hungarian_match
from .synth import SceneGenerationError, SceneParams, SyntheticScene, generate_synthetic_scene
from .trainer import (METRICS_HEADER, EvalResult, TrainConfig, TrainingDivergedError, TrainResult, evaluate,
                      predict, test_splits, train)

__all__ = [
    "hungarian_match", "MatchResult", "NonFiniteCostError",
    "detection_loss", "layer_l1_to_matched", "LossBreakdown", "LossWeights", "Target",
    "generate_synthetic_scene", "SceneParams", "SyntheticScene", "SceneGenerationError",
    "build_split", "rotated_split", "make_batch", "scene_target", "save_dataset", "load_dataset",
    "TrainConfig", "TrainResult", "EvalResult", "TrainingDivergedError", "METRICS_HEADER",
    "train", "evaluate", "predict", "test_splits",
]
