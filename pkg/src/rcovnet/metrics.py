"""Cell-summed matrix error metrics."""
import numpy as np

from rcovnet.errors import ShapeMismatch


def _diff(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim < 2 or pred.shape[-1] != pred.shape[-2]:
        raise ShapeMismatch(f"cannot compare {pred.shape} with {truth.shape}")
    return pred - truth


def matrix_rmse(pred, truth):
    """Square root of the summed squared cell errors; one value per matrix."""
    e = _diff(pred, truth)
    out = np.sqrt(np.sum(e * e, axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def matrix_mae(pred, truth):
    """Sum of absolute cell errors; one value per matrix."""
    out = np.sum(np.abs(_diff(pred, truth)), axis=(-2, -1))
    return float(out) if out.ndim == 0 else out
