from .checkpoint import (CheckpointError, TrainedModel, from_bytes, load_checkpoint,
                         save_checkpoint, to_bytes)
from .nets import NetSpec
from .train import (GanConfig, PoseConfig, TrainingDiverged, VaeConfig, forward, kl_divergence,
                    poses_from_prediction, predict_pose, sample_tacngen, train_cgan,
                    train_posenet, train_vae)

__all__ = [
    "CheckpointError", "GanConfig", "NetSpec", "PoseConfig", "TrainedModel", "TrainingDiverged",
    "VaeConfig", "forward", "from_bytes", "kl_divergence", "load_checkpoint",
    "poses_from_prediction", "predict_pose", "sample_tacngen", "save_checkpoint", "to_bytes",
    "train_cgan", "train_posenet", "train_vae",
]
