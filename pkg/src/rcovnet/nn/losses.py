"""Per-sample matrix losses and their gradients.

Every loss takes ``(n, d, d)`` predictions and targets and returns the mean
over samples; ``*_grad`` returns d(loss)/d(pred) for that mean.
"""
from enum import Enum

import numpy as np

from rcovnet.errors import ConfigError, ShapeMismatch


class LossKind(str, Enum):
    HUBER = "huber"
    L1 = "l1"
    L2 = "l2"

    @classmethod
    def parse(cls, value):
        return value if isinstance(value, cls) else cls(str(value).strip().lower())


class HuberMode(str, Enum):
    MATRIX_NORM = "matrix-norm"
    CELL_WISE = "cell-wise"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace("_", "-"))


def _residual(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    return pred - target


def huber_cells(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_loss(pred, target, delta, mode=HuberMode.MATRIX_NORM):
    """Mean Huber loss over samples.

    ``matrix-norm``: with e1 the sum of absolute cell errors and e2 the sum of
    squared cell errors, a sample costs e2 / 2 when e1 <= delta and
    delta * (e1 - delta / 2) otherwise.  The two branches do not meet at
    e1 = delta, so this loss jumps there.  ``cell-wise`` applies the scalar
    Huber function to every cell and sums.
    """
    if not delta > 0:
        raise ConfigError("huber delta must be positive")
    r = _residual(pred, target)
    mode = HuberMode.parse(mode)
    if mode is HuberMode.CELL_WISE:
        return float(huber_cells(r, delta).sum(axis=(1, 2)).mean())
    e1 = np.abs(r).sum(axis=(1, 2))
    e2 = (r * r).sum(axis=(1, 2))
    return float(np.where(e1 <= delta, 0.5 * e2, delta * (e1 - 0.5 * delta)).mean())


def huber_grad(pred, target, delta, mode=HuberMode.MATRIX_NORM):
    r = _residual(pred, target)
    n = r.shape[0]
    if HuberMode.parse(mode) is HuberMode.CELL_WISE:
        g = np.clip(r, -delta, delta)
    else:
        e1 = np.abs(r).sum(axis=(1, 2))
        g = np.where((e1 <= delta)[:, None, None], r, delta * np.sign(r))
    return g / n


def l1_loss(pred, target):
    return float(np.abs(_residual(pred, target)).sum(axis=(1, 2)).mean())


def l1_grad(pred, target):
    r = _residual(pred, target)
    return np.sign(r) / r.shape[0]


def l2_loss(pred, target):
    """Half the squared Frobenius error, so it equals Huber with delta -> inf."""
    r = _residual(pred, target)
    return float(0.5 * (r * r).sum(axis=(1, 2)).mean())


def l2_grad(pred, target):
    r = _residual(pred, target)
    return r / r.shape[0]


def loss_and_grad(pred, target, kind=LossKind.HUBER, delta=300.0, mode=HuberMode.MATRIX_NORM):
    kind = LossKind.parse(kind)
    if kind is LossKind.HUBER:
        return huber_loss(pred, target, delta, mode), huber_grad(pred, target, delta, mode)
    if kind is LossKind.L1:
        return l1_loss(pred, target), l1_grad(pred, target)
    return l2_loss(pred, target), l2_grad(pred, target)
