"""Flat parameter storage with named per-layer views."""
from typing import NamedTuple

import numpy as np

from rcovnet.errors import ShapeMismatch
from rcovnet.nn.spec import GATES, LayerKind

FORGET_BIAS = 1.0


class Slot(NamedTuple):
    name: str
    shape: tuple
    offset: int
    role: str  # "kernel", "bias" or "peephole"

    @property
    def size(self):
        return int(np.prod(self.shape))


def layout(spec):
    """Ordered parameter slots.

    A ConvLSTM layer stores one kernel of shape ``(4H, C_in + H, kh, kw)``
    whose output blocks are the gates ``i, f, g, o`` and whose input channels
    are the step input followed by the previous hidden state.  Peepholes are
    ``(3, H, d, d)`` maps for ``i, f, o``.
    """
    slots = []
    offset = 0

    def add(name, shape, role):
        nonlocal offset
        slots.append(Slot(name, tuple(shape), offset, role))
        offset += int(np.prod(shape))

    for k, l in enumerate(spec.layers):
        kh, kw = l.kernel
        if l.kind is LayerKind.CONVLSTM:
            H = l.out_channels
            add(f"{k}.w", (len(GATES) * H, l.in_channels + H, kh, kw), "kernel")
            if l.use_bias:
                add(f"{k}.b", (len(GATES) * H,), "bias")
            if l.peephole:
                add(f"{k}.peep", (3, H, spec.d, spec.d), "peephole")
        else:
            add(f"{k}.w", (l.out_channels, l.in_channels, kh, kw), "kernel")
            if l.use_bias:
                add(f"{k}.b", (l.out_channels,), "bias")
    return slots, offset


class ModelWeights:
    """All trainable parameters of one model in a single float64 vector."""

    def __init__(self, spec, data=None):
        self.spec = spec
        self.slots, n = layout(spec)
        if data is None:
            data = np.zeros(n)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape != (n,):
            raise ShapeMismatch(f"expected {n} parameters, got shape {data.shape}")
        self.data = data
        self.views = {s.name: data[s.offset:s.offset + s.size].reshape(s.shape) for s in self.slots}

    def __getitem__(self, name):
        return self.views[name]

    def __setitem__(self, name, value):
        self.views[name][...] = value

    def __contains__(self, name):
        return name in self.views

    def __len__(self):
        return self.data.size

    def copy(self):
        return ModelWeights(self.spec, self.data.copy())

    def zeros_like(self):
        return ModelWeights(self.spec)

    def mask(self, role):
        """Boolean vector selecting every entry of the given role."""
        m = np.zeros(self.data.size, dtype=bool)
        for s in self.slots:
            if s.role == role:
                m[s.offset:s.offset + s.size] = True
        return m

    def gate_kernels(self, k=0):
        """Views ``W_x{gate}`` and ``W_h{gate}`` of ConvLSTM layer ``k``."""
        l = self.spec.layers[k]
        H, C = l.out_channels, l.in_channels
        w = self.views[f"{k}.w"]
        out = {}
        for n, g in enumerate(GATES):
            out[f"W_x{g}"] = w[n * H:(n + 1) * H, :C]
            out[f"W_h{g}"] = w[n * H:(n + 1) * H, C:]
        return out


def init_weights(spec, seed=0):
    """Uniform kernels in +-sqrt(6 / fan_in), zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    w = ModelWeights(spec)
    for s in w.slots:
        view = w.views[s.name]
        if s.role == "kernel":
            fan_in = s.shape[1] * s.shape[2] * s.shape[3]
            bound = np.sqrt(6.0 / fan_in)
            view[...] = rng.uniform(-bound, bound, s.shape)
        elif s.role == "bias" and spec.layers[int(s.name.split(".")[0])].kind is LayerKind.CONVLSTM:
            H = s.shape[0] // len(GATES)
            view[H:2 * H] = FORGET_BIAS
    return w
