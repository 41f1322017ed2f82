"""Mini-batch training with validation-based model selection."""
import time
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from rcovnet.errors import ConfigError, EmptySplit, NumericalError, SeriesTooShort
from rcovnet.metrics import matrix_mae, matrix_rmse
from rcovnet.nn.losses import HuberMode, LossKind
from rcovnet.nn.model import LossConfig, forward, value_and_grad
from rcovnet.nn.optim import AdamState, adam_step
from rcovnet.nn.weights import init_weights
from rcovnet.transforms import TransformKind, forward_transform, inverse_transform


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-5
    batch_size: int = 128
    l1_lambda: float = 0.005
    huber_delta: float = 300.0
    huber_mode: HuberMode = HuberMode.MATRIX_NORM
    loss: LossKind = LossKind.HUBER
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        self.huber_mode = HuberMode.parse(self.huber_mode)
        self.loss = LossKind.parse(self.loss)
        if not (self.lr > 0 and self.huber_delta > 0 and self.batch_size >= 1
                and self.max_epochs >= 1 and self.patience >= 1):
            raise ConfigError("lr, huber_delta, batch_size, max_epochs and patience must be positive")
        if self.weight_decay < 0 or self.l1_lambda < 0:
            raise ConfigError("weight_decay and l1_lambda must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")

    @property
    def loss_config(self):
        return LossConfig(self.loss, self.huber_delta, self.huber_mode, self.l1_lambda)

    def to_dict(self):
        out = asdict(self)
        out["huber_mode"] = self.huber_mode.value
        out["loss"] = self.loss.value
        return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float       # batch-mean data loss, averaged over the epoch
    train_objective: float  # data loss plus the L1 penalty
    val_rmse: float         # mean per-day RMSE in covariance space
    val_mae: float
    seconds: float


@dataclass
class TrainResult:
    weights: object
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = float("inf")
    stopped_early: bool = False


def predict_windows(spec, weights, windows, kind):
    """Covariance forecasts ``(n, d, d)`` for a stack of transformed windows."""
    return inverse_transform(forward(spec, weights, windows), kind)


def validation_scores(spec, weights, val_set):
    idx = np.arange(len(val_set))
    pred = predict_windows(spec, weights, val_set.inputs(idx), val_set.kind)
    truth = val_set.raw_targets(idx)
    return float(np.mean(matrix_rmse(pred, truth))), float(np.mean(matrix_mae(pred, truth)))


def train(spec, train_set, val_set, config=None, weights=None, on_epoch=None):
    """Fit ``spec`` on a training :class:`WindowSet`, selecting by validation RMSE.

    Each epoch visits the training windows in a seeded random order, takes one
    Adam step per mini-batch, then scores every validation window after
    inverting the transform.  The weights with the lowest validation RMSE are
    returned; training stops after ``max_epochs`` or ``patience`` epochs
    without improvement.
    """
    config = config or TrainConfig()
    if len(train_set) == 0:
        raise EmptySplit("training split has no windows")
    if len(val_set) == 0:
        raise EmptySplit("validation split has no windows")
    w = init_weights(spec, config.seed) if weights is None else weights.copy()
    state = AdamState.zeros(len(w))
    rng = np.random.default_rng(config.seed)
    loss_cfg = config.loss_config
    result = TrainResult(w.copy())
    stale = 0
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        tot_loss = tot_obj = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, obj, grad = value_and_grad(spec, w, train_set.inputs(idx), train_set.targets(idx), loss_cfg)
            if not (np.isfinite(obj) and np.all(np.isfinite(grad))):
                raise NumericalError(f"non-finite loss or gradient in epoch {epoch}")
            adam_step(w.data, grad, state, config.lr, config.beta1, config.beta2, config.weight_decay)
            tot_loss += loss * len(idx)
            tot_obj += obj * len(idx)
        val_rmse, val_mae = validation_scores(spec, w, val_set)
        rec = EpochRecord(epoch, tot_loss / n, tot_obj / n, val_rmse, val_mae, time.perf_counter() - t0)
        result.history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if val_rmse < result.best_val_rmse:
            result.best_val_rmse = val_rmse
            result.best_epoch = epoch
            result.weights = w.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                result.stopped_early = True
                break
    return result


class ConvLstmForecaster:
    """One-step forecaster over raw covariance history."""

    def __init__(self, spec, weights, kind, name="ConvLSTM"):
        self.spec = spec
        self.weights = weights
        self.kind = TransformKind.parse(kind)
        self.name = name
        self.params_label = str(sum(l.weight_count() for l in spec.layers))

    def predict(self, history):
        H = np.asarray(history, dtype=np.float64)
        m = self.spec.lag
        if H.shape[0] < m:
            raise SeriesTooShort(f"need {m} days of history, got {H.shape[0]}")
        window = np.stack([forward_transform(H[-1 - k], self.kind) for k in range(m)])
        return inverse_transform(forward(self.spec, self.weights, window), self.kind)
