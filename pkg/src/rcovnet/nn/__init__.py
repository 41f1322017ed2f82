"""Small from-scratch ConvLSTM engine: layers, losses, gradients, training."""
from rcovnet.nn.checkpoint import CheckpointMismatch, load_checkpoint, save_checkpoint
from rcovnet.nn.losses import HuberMode, LossKind, huber_loss, l1_loss, l2_loss, loss_and_grad
from rcovnet.nn.model import (
    LossConfig,
    backward,
    conv2d_same,
    convlstm_step,
    feature_maps,
    forward,
    value_and_grad,
)
from rcovnet.nn.optim import AdamState, adam_step
from rcovnet.nn.spec import (
    PRESETS,
    LayerKind,
    LayerSpec,
    ModelSpec,
    build_spec,
    count_params,
    djia_spec,
    simulation_spec,
    sp100_spec,
)
from rcovnet.nn.training import (
    ConvLstmForecaster,
    EpochRecord,
    TrainConfig,
    TrainResult,
    predict_windows,
    train,
    validation_scores,
)
from rcovnet.nn.weights import ModelWeights, init_weights

__all__ = [
    "AdamState", "CheckpointMismatch", "ConvLstmForecaster", "EpochRecord", "HuberMode", "LayerKind",
    "LayerSpec", "LossConfig", "LossKind", "ModelSpec", "ModelWeights", "PRESETS", "TrainConfig",
    "TrainResult", "adam_step", "backward", "build_spec", "conv2d_same", "convlstm_step", "count_params",
    "djia_spec", "feature_maps", "forward", "huber_loss", "init_weights", "l1_loss", "l2_loss",
    "load_checkpoint", "loss_and_grad", "predict_windows", "save_checkpoint", "simulation_spec", "sp100_spec", "train",
    "validation_scores", "value_and_grad",
]
