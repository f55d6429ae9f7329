from .checkpoint import load_checkpoint, save_checkpoint
from .model import LayerSpec, Model, cry_cnn_layers, cry_cnn, shape_chain
from .optim import AdamState, adam_step
from .training import EpochRecord, TrainConfig, TrainResult, evaluate, predict, predict_proba, train

__all__ = [
    "AdamState", "EpochRecord", "LayerSpec", "Model", "TrainConfig", "TrainResult", "adam_step",
    "evaluate", "load_checkpoint", "cry_cnn_layers", "cry_cnn", "predict", "predict_proba",
    "save_checkpoint", "shape_chain", "train",
]
