from .attention import DeformableAttention, FactorizedSelfAttention
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .detector import DetectionOutput, Detector, LayerOutput, Proposals, grid_centres
from .queries import BoxQueryEncoder, PointQueryEncoder, point_update, prior_points_sampling

__all__ = [
    "ModelConfig", "Detector", "DetectionOutput", "LayerOutput", "Proposals", "grid_centres",
    "DeformableAttention", "FactorizedSelfAttention", "PointQueryEncoder", "BoxQueryEncoder",
    "prior_points_sampling", "point_update", "save_checkpoint", "load_checkpoint", "CheckpointError",
]
