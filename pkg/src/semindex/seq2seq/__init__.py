from .checkpoint import load_checkpoint, save_checkpoint
from .model import EncodedQuery, ModelConfig, PawaModel
from .training import Adam, TrainConfig, train

__all__ = [
    "Adam",
    "EncodedQuery",
    "ModelConfig",
    "PawaModel",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
