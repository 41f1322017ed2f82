"""Declarative description of an encoding-generating ConvLSTM network."""
import hashlib
import json
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Tuple

from rcovnet.errors import ConfigError

DEFAULT_LRELU_SLOPE = 0.01
GATES = ("i", "f", "g", "o")


class LayerKind(str, Enum):
    CONVLSTM = "convlstm"
    CONV_LRELU = "conv-lrelu"
    CONV_LINEAR = "conv-linear"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int
    out_channels: int
    kernel: Tuple[int, int]
    use_bias: bool = True
    peephole: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        k = tuple(int(v) for v in (self.kernel if hasattr(self.kernel, "__len__") else (self.kernel,) * 2))
        object.__setattr__(self, "kernel", k)
        if len(k) != 2 or any(v < 1 or v % 2 == 0 for v in k):
            raise ConfigError(f"kernel sizes must be odd and positive, got {k}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.peephole and self.kind is not LayerKind.CONVLSTM:
            raise ConfigError("peephole connections only apply to ConvLSTM layers")

    @property
    def kernel_area(self):
        return self.kernel[0] * self.kernel[1]

    def weight_count(self):
        """Kernel entries only, no biases or peepholes."""
        if self.kind is LayerKind.CONVLSTM:
            n_in = self.in_channels + self.out_channels
            return len(GATES) * self.out_channels * n_in * self.kernel_area
        return self.out_channels * self.in_channels * self.kernel_area


@dataclass(frozen=True)
class ModelSpec:
    """Lag ``lag``, matrix size ``d`` and an ordered layer stack.

    The first layer is a ConvLSTM fed one ``d x d`` matrix per step; every
    later layer is a same-padded convolution, and the last one is linear with
    a single output channel.
    """

    lag: int
    d: int
    layers: Tuple[LayerSpec, ...]
    lrelu_slope: float = DEFAULT_LRELU_SLOPE

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.lag < 1 or self.d < 1:
            raise ConfigError("lag and d must be positive")
        if not self.layers:
            raise ConfigError("a model needs at least one layer")
        if self.layers[0].kind is not LayerKind.CONVLSTM or self.layers[0].in_channels != 1:
            raise ConfigError("first layer must be a single-input-channel ConvLSTM")
        if any(l.kind is LayerKind.CONVLSTM for l in self.layers[1:]):
            raise ConfigError("only the first layer may be a ConvLSTM")
        last = self.layers[-1]
        if len(self.layers) < 2 or last.kind is not LayerKind.CONV_LINEAR or last.out_channels != 1:
            raise ConfigError("last layer must be a linear convolution with one output channel")
        if any(l.kind is LayerKind.CONV_LINEAR for l in self.layers[:-1]):
            raise ConfigError("only the last layer may be linear")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ConfigError(f"channel mismatch: {a.out_channels} -> {b.in_channels}")

    def to_dict(self):
        out = asdict(self)
        out["layers"] = [dict(asdict(l), kind=l.kind.value, kernel=list(l.kernel)) for l in self.layers]
        return out

    @classmethod
    def from_dict(cls, data):
        layers = tuple(LayerSpec(**dict(l, kernel=tuple(l["kernel"]))) for l in data["layers"])
        return cls(int(data["lag"]), int(data["d"]), layers, float(data.get("lrelu_slope", DEFAULT_LRELU_SLOPE)))

    def digest(self):
        """SHA-256 of the canonical JSON form; ties checkpoints to an architecture."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def build_spec(d, lag, channels, kernels, use_bias=True, peephole=False, lrelu_slope=DEFAULT_LRELU_SLOPE):
    """Stack from channel and kernel lists.

    ``channels[0]`` is the ConvLSTM hidden size and ``channels[-1]`` must be 1;
    ``kernels[k]`` is the (odd) square kernel of layer ``k``.
    """
    if len(channels) != len(kernels) or len(channels) < 2:
        raise ConfigError("need matching channel and kernel lists of length >= 2")
    layers = []
    n_in = 1
    for k, (c, ks) in enumerate(zip(channels, kernels)):
        if k == 0:
            kind = LayerKind.CONVLSTM
        elif k == len(channels) - 1:
            kind = LayerKind.CONV_LINEAR
        else:
            kind = LayerKind.CONV_LRELU
        layers.append(LayerSpec(kind, n_in, int(c), (int(ks), int(ks)), use_bias, peephole and k == 0))
        n_in = int(c)
    return ModelSpec(int(lag), int(d), tuple(layers), lrelu_slope)


def simulation_spec(d=60, lag=20, **kw):
    """Three-layer network used on the simulated data."""
    return build_spec(d, lag, (8, 16, 1), (3, 3, 1), **kw)


def djia_spec(d=25, lag=20, **kw):
    """Three-layer network for a 25-asset panel."""
    return build_spec(d, lag, (4, 8, 1), (3, 3, 1), **kw)


def sp100_spec(d=60, lag=20, **kw):
    """Four-layer network for a 60-asset panel."""
    return build_spec(d, lag, (16, 16, 32, 1), (5, 3, 3, 5), **kw)


PRESETS = {"simulation": simulation_spec, "djia": djia_spec, "sp100": sp100_spec}


def count_params(spec):
    """``(weights_only, total)``.

    ``weights_only`` counts kernel entries; ``total`` adds biases and
    peephole maps.
    """
    weights = sum(l.weight_count() for l in spec.layers)
    extra = 0
    for l in spec.layers:
        n_bias = len(GATES) * l.out_channels if l.kind is LayerKind.CONVLSTM else l.out_channels
        if l.use_bias:
            extra += n_bias
        if l.peephole:
            extra += 3 * l.out_channels * spec.d * spec.d
    return weights, weights + extra
