"""Adam with coupled weight decay."""
from dataclasses import dataclass

import numpy as np

ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def adam_step(params, grad, state, lr=1e-3, beta1=0.9, beta2=0.999, weight_decay=0.0, eps=ADAM_EPS):
    """One bias-corrected Adam update of ``params`` in place.

    Weight decay enters the gradient as ``weight_decay * params`` before the
    moment updates.  Returns ``(params, state)``.
    """
    g = grad + weight_decay * params if weight_decay else np.asarray(grad, dtype=np.float64)
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state
