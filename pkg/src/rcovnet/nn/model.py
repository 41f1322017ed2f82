"""Forward pass and reverse-mode gradients of the ConvLSTM forecaster.

Batched tensors are ``(B, C, d, d)``.  A lag window is ``(m, d, d)`` with
slice 0 the most recent day; the ConvLSTM consumes it oldest first from zero
hidden and cell states, and its final hidden state feeds the convolution
stack.
"""
from typing import NamedTuple

import numpy as np
from scipy.special import expit as sigmoid

from rcovnet._backend import kernels
from rcovnet.errors import ShapeMismatch
from rcovnet.nn.losses import HuberMode, LossKind, loss_and_grad
from rcovnet.nn.spec import LayerKind

# Cache budget for one backward chunk; larger batches are split.
DEFAULT_CHUNK_BYTES = 256 * 2 ** 20


def lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


def lrelu_grad(pre, slope):
    return np.where(pre > 0, 1.0, slope)


def conv2d_same(x, w, bias=None):
    """Same-padded cross-correlation of ``(C, H, W)`` or ``(B, C, H, W)`` input."""
    x = np.asarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4 or w.ndim != 4 or w.shape[1] != xb.shape[1]:
        raise ShapeMismatch(f"cannot convolve input {x.shape} with kernel {w.shape}")
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ShapeMismatch(f"kernel dims must be odd, got {w.shape[2:]}")
    out = kernels.conv2d_forward(np.ascontiguousarray(xb), w)
    if bias is not None:
        out += np.asarray(bias)[None, :, None, None]
    return out[0] if single else out


class CellCache(NamedTuple):
    xh: np.ndarray      # step input and previous hidden state, stacked on channels
    act: np.ndarray     # activated gates i, f, g, o as (B, 4H, d*d)
    c_prev: np.ndarray  # (B, H, d*d)
    tanh_c: np.ndarray  # (B, H, d*d)


_NO_PEEP = np.zeros((3, 1, 1))


def _cell(xh, w, b, peep, c_prev):
    B, H, d = c_prev.shape[0], c_prev.shape[1], c_prev.shape[2]
    z = kernels.conv2d_forward(xh, w)
    if b is not None:
        z += b[None, :, None, None]
    flat_c = c_prev.reshape(B, H, d * d)
    use_peep = peep is not None
    pp = np.ascontiguousarray(peep.reshape(3, H, d * d)) if use_peep else _NO_PEEP
    act, c, tanh_c, h = kernels.lstm_gates_forward(z.reshape(B, 4 * H, d * d), flat_c, pp, use_peep)
    shape = (B, H, d, d)
    return h.reshape(shape), c.reshape(shape), CellCache(xh, act, flat_c, tanh_c)


def _lstm_params(weights, k=0):
    return (weights[f"{k}.w"], weights[f"{k}.b"] if f"{k}.b" in weights else None,
            weights[f"{k}.peep"] if f"{k}.peep" in weights else None)


def convlstm_step(x_t, h_prev, c_prev, weights, k=0):
    """One ConvLSTM update; accepts ``(C, d, d)`` or batched ``(B, C, d, d)`` tensors."""
    single = np.ndim(x_t) == 3
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    if single:
        x_t, h_prev, c_prev = x_t[None], h_prev[None], c_prev[None]
    w, b, peep = _lstm_params(weights, k)
    H, C = weights.spec.layers[k].out_channels, weights.spec.layers[k].in_channels
    if x_t.shape[1] != C or h_prev.shape[1] != H or c_prev.shape != h_prev.shape or x_t.shape[2:] != h_prev.shape[2:]:
        raise ShapeMismatch(f"inconsistent step shapes {x_t.shape}, {h_prev.shape}, {c_prev.shape}")
    xh = np.ascontiguousarray(np.concatenate([x_t, h_prev], axis=1))
    h, c, _ = _cell(xh, w, b, peep, c_prev)
    return (h[0], c[0]) if single else (h, c)


def _check_windows(spec, windows):
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (spec.lag, spec.d, spec.d):
        raise ShapeMismatch(f"expected windows (B, {spec.lag}, {spec.d}, {spec.d}), got {np.shape(windows)}")
    return x


def _run(spec, weights, x, keep_cache):
    """Forward over a ``(B, m, d, d)`` batch; returns output and optional caches."""
    B, m, d = x.shape[0], spec.lag, spec.d
    first = spec.layers[0]
    H = first.out_channels
    w, b, peep = _lstm_params(weights, 0)
    h = np.zeros((B, H, d, d))
    c = np.zeros((B, H, d, d))
    steps = []
    for t in range(m):
        x_t = x[:, m - 1 - t, None]  # oldest day first
        xh = np.ascontiguousarray(np.concatenate([x_t, h], axis=1))
        h, c, cache = _cell(xh, w, b, peep, c)
        if keep_cache:
            steps.append(cache)
    pre = [h]
    a = lrelu(h, spec.lrelu_slope)
    inputs = []
    maps = [a]
    for k, l in enumerate(spec.layers[1:], start=1):
        inputs.append(a)
        z = kernels.conv2d_forward(np.ascontiguousarray(a), weights[f"{k}.w"])
        if l.use_bias:
            z += weights[f"{k}.b"][None, :, None, None]
        pre.append(z)
        a = z if l.kind is LayerKind.CONV_LINEAR else lrelu(z, spec.lrelu_slope)
        maps.append(a)
    return a[:, 0], {"steps": steps, "pre": pre, "inputs": inputs, "maps": maps}


def _chunk_size(spec, requested=None):
    if requested:
        return int(requested)
    H = spec.layers[0].out_channels
    per_sample = 8 * spec.d * spec.d * (spec.lag * (8 * H + 1) + 4 * sum(l.out_channels for l in spec.layers))
    return max(1, DEFAULT_CHUNK_BYTES // per_sample)


def forward(spec, weights, windows, chunk=None):
    """Raw network output: ``(d, d)`` for one window or ``(B, d, d)`` for a batch."""
    single = np.ndim(windows) == 3
    x = _check_windows(spec, windows)
    n = _chunk_size(spec, chunk) * 4
    out = np.concatenate([_run(spec, weights, x[s:s + n], False)[0] for s in range(0, x.shape[0], n)])
    return out[0] if single else out


def feature_maps(spec, weights, window):
    """Per-layer activations ``[(C_k, d, d), ...]`` for one window."""
    x = _check_windows(spec, window)[:1]
    _, state = _run(spec, weights, x, False)
    return [m[0] for m in state["maps"]]


def _backward(spec, weights, st, gout, grad):
    """Accumulate parameter gradients of ``sum(out * gout)`` into ``grad``.

    ``st`` is the cached state of the forward pass that produced ``out``.
    """
    slope = spec.lrelu_slope
    # generating and encoding convolutions, last layer first
    g = gout[:, None]
    for k in range(len(spec.layers) - 1, 0, -1):
        l = spec.layers[k]
        if l.kind is not LayerKind.CONV_LINEAR:
            g = g * lrelu_grad(st["pre"][k], slope)
        g = np.ascontiguousarray(g)
        kh, kw = l.kernel
        grad[f"{k}.w"] += kernels.conv2d_backward_weight(np.ascontiguousarray(st["inputs"][k - 1]), g, kh, kw)
        if l.use_bias:
            grad[f"{k}.b"] += g.sum(axis=(0, 2, 3))
        g = kernels.conv2d_backward_input(g, weights[f"{k}.w"])
    dh = g * lrelu_grad(st["pre"][0], slope)

    # backpropagation through time
    first = spec.layers[0]
    H, C = first.out_channels, first.in_channels
    kh, kw = first.kernel
    w, b, peep = _lstm_params(weights, 0)
    B, d = dh.shape[0], spec.d
    dh = np.ascontiguousarray(dh).reshape(B, H, d * d)
    dc = np.zeros_like(dh)
    gw = np.zeros_like(w)
    gb = np.zeros(4 * H)
    use_peep = peep is not None
    pp = np.ascontiguousarray(peep.reshape(3, H, d * d)) if use_peep else _NO_PEEP
    gpeep = np.zeros_like(pp)
    for cache in reversed(st["steps"]):
        dz, dc = kernels.lstm_gates_backward(dh, dc, cache.act, cache.c_prev, cache.tanh_c, pp, gpeep, use_peep)
        dz = dz.reshape(B, 4 * H, d, d)
        gw += kernels.conv2d_backward_weight(cache.xh, dz, kh, kw)
        gb += dz.sum(axis=(0, 2, 3))
        dh = np.ascontiguousarray(kernels.conv2d_backward_input(dz, w)[:, C:]).reshape(B, H, d * d)
    grad["0.w"] += gw
    if b is not None:
        grad["0.b"] += gb
    if use_peep:
        grad["0.peep"] += gpeep.reshape(peep.shape)


class LossConfig(NamedTuple):
    kind: LossKind = LossKind.HUBER
    delta: float = 300.0
    mode: HuberMode = HuberMode.MATRIX_NORM
    l1_lambda: float = 0.0


def value_and_grad(spec, weights, windows, targets, loss=LossConfig(), chunk=None):
    """``(data_loss, objective, grad)`` for one mini-batch.

    ``data_loss`` is the batch-mean loss, ``objective`` adds
    ``l1_lambda * sum|kernel weights|`` and ``grad`` is the flat gradient of
    the objective (sign(0) = 0 for the penalty).
    """
    x = _check_windows(spec, windows)
    y = np.asarray(targets, dtype=np.float64).reshape(x.shape[0], spec.d, spec.d)
    B = x.shape[0]
    grad = weights.zeros_like()
    n = _chunk_size(spec, chunk)
    data_loss = 0.0
    for s in range(0, B, n):
        xc, yc = x[s:s + n], y[s:s + n]
        pred, st = _run(spec, weights, xc, True)
        lc, gc = loss_and_grad(pred, yc, loss.kind, loss.delta, loss.mode)
        share = xc.shape[0] / B
        data_loss += share * lc
        _backward(spec, weights, st, gc * share, grad)
    objective = data_loss
    if loss.l1_lambda:
        mask = weights.mask("kernel")
        objective += loss.l1_lambda * float(np.abs(weights.data[mask]).sum())
        grad.data[mask] += loss.l1_lambda * np.sign(weights.data[mask])
    return data_loss, objective, grad.data


def backward(spec, weights, windows, targets, loss=LossConfig(), chunk=None):
    """Flat gradient of the penalised batch objective; see :func:`value_and_grad`."""
    return value_and_grad(spec, weights, windows, targets, loss, chunk)[2]
