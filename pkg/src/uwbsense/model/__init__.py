from .losses import cross_entropy, l2_loss, softmax
from .network import ArchConfig, TwoStreamNet, forward, init_model, load_checkpoint, save_checkpoint
from .training import (TrainConfig, TrainingDiverged, backward, evaluate, finetune, first_minutes,
                       time_split, train, write_history)

__all__ = [
    "ArchConfig", "TwoStreamNet", "TrainConfig", "TrainingDiverged", "backward", "cross_entropy",
    "evaluate", "finetune", "first_minutes", "forward", "init_model", "l2_loss", "load_checkpoint",
    "save_checkpoint", "softmax", "time_split", "train", "write_history",
]
