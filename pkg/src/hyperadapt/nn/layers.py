"""Parameter blocks and the four first-layer variants.

Trainability is decided per named block. The decomposed pipelines train only
their spectral parameters; Reduce trains its two pointwise convolutions (with
biases); Scratch trains its full dense kernel. Spatial taps, Tucker cores,
the original RGB weights and every bias inherited from the source bank are
frozen: backward passes propagate through them but never write to them.

The separable pipelines realize an adapted layer without densifying it:

* CP: pointwise conv (channels -> C_out*R) from the spectral columns, a
  depthwise (k1 x 1) conv from the x taps, a depthwise (1 x k2) conv from
  the y taps, then each consecutive group of R channels is summed into one
  output channel and the frozen bias added.
* Tucker: pointwise conv (channels -> C_out*R) from the spectral factor,
  then one grouped (k1 x k2) conv with groups = C_out whose group o maps its
  R channels to one output through the core of filter o.

Both match the dense convolution of the decompressed bank to float64
round-off. The pointwise stages carry no bias so the pipelines stay exactly
multilinear in the spectral parameters.
"""

from __future__ import annotations

import numpy as np

from ..decomp import CP, TUCKER
from ..errors import ShapeError, UnsupportedKindError
from ..filteradapt import AdaptedLayer, FilterBank
from .conv import _batched, _pair, conv2d, conv2d_backward

__all__ = [
    "Param",
    "ReLU",
    "Linear",
    "Conv2dLayer",
    "CpFirstLayer",
    "TuckerFirstLayer",
    "ReduceFirstLayer",
    "ScratchFirstLayer",
    "cp_pipeline_forward",
    "tucker_pipeline_forward",
    "build_reduce",
    "build_scratch",
    "reduce_hidden_width",
]


class Param:
    """A named parameter block with a trainability flag and a gradient slot."""

    __slots__ = ("name", "value", "trainable", "grad")

    def __init__(self, name: str, value: np.ndarray, trainable: bool):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.trainable = trainable
        self.grad = None

    def __repr__(self):
        tag = "trainable" if self.trainable else "frozen"
        return f"Param({self.name!r}, shape={self.value.shape}, {tag})"


class ReLU:
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class Linear:
    """Fully connected layer: y = x @ W.T + b."""

    def __init__(self, weight: Param, bias: Param):
        self.weight = weight
        self.bias = bias

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dout):
        if self.weight.trainable:
            self.weight.grad = dout.T @ self._x
        if self.bias.trainable:
            self.bias.grad = dout.sum(axis=0)
        return dout @ self.weight.value


class Conv2dLayer:
    """Plain conv layer around a weight Param and optional bias Param."""

    def __init__(self, weight: Param, bias: Param | None = None,
                 stride=1, padding=0, groups=1):
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    @property
    def out_channels(self):
        return self.weight.value.shape[0]

    @property
    def in_channels(self):
        return self.weight.value.shape[1] * self.groups

    def forward(self, x):
        self._x = x
        return conv2d(x, self.weight.value,
                      self.bias.value if self.bias is not None else None,
                      self.stride, self.padding, self.groups)

    def backward(self, dout):
        need_db = self.bias is not None and self.bias.trainable
        dx, dw, db = conv2d_backward(
            self._x, self.weight.value, dout, self.stride, self.padding, self.groups,
            need_dx=True, need_dw=self.weight.trainable, need_db=need_db,
        )
        if self.weight.trainable:
            self.weight.grad = dw
        if need_db:
            self.bias.grad = db
        return dx


def _spectral_to_pointwise(spectral: np.ndarray) -> np.ndarray:
    # (C_out, channels, R) -> (C_out*R, channels, 1, 1), output o*R+r from column r of filter o
    co, cn, rk = spectral.shape
    return np.ascontiguousarray(spectral.transpose(0, 2, 1)).reshape(co * rk, cn, 1, 1)


def _pointwise_grad_to_spectral(dw: np.ndarray, co: int, cn: int, rk: int) -> np.ndarray:
    return np.ascontiguousarray(dw.reshape(co, rk, cn).transpose(0, 2, 1))


class CpFirstLayer:
    """Separable realization of a CP adapted layer. Only the spectral block trains."""

    kind = CP

    def __init__(self, adapted: AdaptedLayer, stride=1, padding=0, prefix="first"):
        if adapted.kind != CP:
            raise UnsupportedKindError("CpFirstLayer needs a CP adapted layer")
        # Copy: training updates this block in place and must not write back
        # into the AdaptedLayer it was built from.
        self.spectral = Param(f"{prefix}.spectral", adapted.spectral.copy(), True)
        self.x = Param(f"{prefix}.x", adapted.x, False)
        self.y = Param(f"{prefix}.y", adapted.y, False)
        self.bias = Param(f"{prefix}.bias", adapted.bias, False) if adapted.bias is not None else None
        self.stride = stride
        self.padding = padding

    def params(self):
        out = [self.spectral, self.x, self.y]
        if self.bias is not None:
            out.append(self.bias)
        return out

    @property
    def out_channels(self):
        return self.spectral.value.shape[0]

    @property
    def in_channels(self):
        return self.spectral.value.shape[1]

    @property
    def rank(self):
        return self.spectral.value.shape[2]

    def _weights(self):
        co, _, rk = self.spectral.value.shape
        k1 = self.x.value.shape[1]
        k2 = self.y.value.shape[1]
        w1 = _spectral_to_pointwise(self.spectral.value)
        wv = np.ascontiguousarray(self.x.value.transpose(0, 2, 1)).reshape(co * rk, 1, k1, 1)
        wh = np.ascontiguousarray(self.y.value.transpose(0, 2, 1)).reshape(co * rk, 1, 1, k2)
        return w1, wv, wh

    def forward(self, x):
        x4, squeeze = _batched(x)
        if x4.shape[1] != self.in_channels:
            raise ShapeError(f"input has {x4.shape[1]} channels, layer expects {self.in_channels}")
        co, _, rk = self.spectral.value.shape
        sh, sw = _pair(self.stride)
        ph, pw = _pair(self.padding)
        w1, wv, wh = self._weights()
        self._x4 = x4
        self._h1 = conv2d(x4, w1)
        self._h2 = conv2d(self._h1, wv, stride=(sh, 1), padding=(ph, 0), groups=co * rk)
        h3 = conv2d(self._h2, wh, stride=(1, sw), padding=(0, pw), groups=co * rk)
        n, _, ho, wo = h3.shape
        out = h3.reshape(n, co, rk, ho, wo).sum(axis=2)
        if self.bias is not None:
            out = out + self.bias.value[:, None, None]
        return out[0] if squeeze else out

    def backward(self, dout):
        d4, _ = _batched(dout)
        co, cn, rk = self.spectral.value.shape
        sh, sw = _pair(self.stride)
        ph, pw = _pair(self.padding)
        w1, wv, wh = self._weights()
        n, _, ho, wo = d4.shape
        dh3 = np.broadcast_to(d4[:, :, None], (n, co, rk, ho, wo)).reshape(n, co * rk, ho, wo)
        dh2, _, _ = conv2d_backward(self._h2, wh, dh3, stride=(1, sw), padding=(0, pw),
                                    groups=co * rk, need_dw=False)
        dh1, _, _ = conv2d_backward(self._h1, wv, dh2, stride=(sh, 1), padding=(ph, 0),
                                    groups=co * rk, need_dw=False)
        dx, dw1, _ = conv2d_backward(self._x4, w1, dh1, need_dw=self.spectral.trainable)
        if self.spectral.trainable:
            self.spectral.grad = _pointwise_grad_to_spectral(dw1, co, cn, rk)
        return dx

    def dense_bank(self) -> np.ndarray:
        return np.einsum("ocr,oir,ojr->ocij", self.spectral.value, self.x.value, self.y.value)

    def to_adapted(self) -> AdaptedLayer:
        return AdaptedLayer(kind=CP, spectral=self.spectral.value.copy(),
                            x=self.x.value, y=self.y.value,
                            bias=self.bias.value if self.bias is not None else None)


class TuckerFirstLayer:
    """Pointwise + grouped-conv realization of a Tucker adapted layer."""

    kind = TUCKER

    def __init__(self, adapted: AdaptedLayer, stride=1, padding=0, prefix="first"):
        if adapted.kind != TUCKER:
            raise UnsupportedKindError("TuckerFirstLayer needs a Tucker adapted layer")
        self.spectral = Param(f"{prefix}.spectral", adapted.spectral.copy(), True)
        self.core = Param(f"{prefix}.core", adapted.core, False)
        self.bias = Param(f"{prefix}.bias", adapted.bias, False) if adapted.bias is not None else None
        self.stride = stride
        self.padding = padding

    def params(self):
        out = [self.spectral, self.core]
        if self.bias is not None:
            out.append(self.bias)
        return out

    @property
    def out_channels(self):
        return self.spectral.value.shape[0]

    @property
    def in_channels(self):
        return self.spectral.value.shape[1]

    @property
    def rank(self):
        return self.spectral.value.shape[2]

    def forward(self, x):
        x4, squeeze = _batched(x)
        if x4.shape[1] != self.in_channels:
            raise ShapeError(f"input has {x4.shape[1]} channels, layer expects {self.in_channels}")
        co = self.out_channels
        w1 = _spectral_to_pointwise(self.spectral.value)
        self._x4 = x4
        self._h1 = conv2d(x4, w1)
        out = conv2d(self._h1, self.core.value, stride=self.stride,
                     padding=self.padding, groups=co)
        if self.bias is not None:
            out = out + self.bias.value[:, None, None]
        return out[0] if squeeze else out

    def backward(self, dout):
        d4, _ = _batched(dout)
        co, cn, rk = self.spectral.value.shape
        w1 = _spectral_to_pointwise(self.spectral.value)
        dh1, _, _ = conv2d_backward(self._h1, self.core.value, d4, stride=self.stride,
                                    padding=self.padding, groups=co, need_dw=False)
        dx, dw1, _ = conv2d_backward(self._x4, w1, dh1, need_dw=self.spectral.trainable)
        if self.spectral.trainable:
            self.spectral.grad = _pointwise_grad_to_spectral(dw1, co, cn, rk)
        return dx

    def dense_bank(self) -> np.ndarray:
        return np.einsum("ocr,oruv->ocuv", self.spectral.value, self.core.value)

    def to_adapted(self) -> AdaptedLayer:
        return AdaptedLayer(kind=TUCKER, spectral=self.spectral.value.copy(),
                            core=self.core.value,
                            bias=self.bias.value if self.bias is not None else None)


class ReduceFirstLayer:
    """Channel reduction to 3 followed by the frozen RGB convolution.

    pointwise (channels -> hidden) + bias, ReLU, pointwise (hidden -> 3) +
    bias, then the original dense RGB conv with its frozen weights and bias.
    Only the two pointwise stages train.
    """

    kind = "reduce"

    def __init__(self, w1, b1, w2, b2, rgb: FilterBank, stride=1, padding=0, prefix="first"):
        self.pw1 = Conv2dLayer(Param(f"{prefix}.w1", w1, True), Param(f"{prefix}.b1", b1, True))
        self.act = ReLU()
        self.pw2 = Conv2dLayer(Param(f"{prefix}.w2", w2, True), Param(f"{prefix}.b2", b2, True))
        rgb_bias = Param(f"{prefix}.rgb_bias", rgb.bias, False) if rgb.bias is not None else None
        self.rgb = Conv2dLayer(Param(f"{prefix}.rgb_weight", rgb.weights, False), rgb_bias,
                               stride=stride, padding=padding)

    def params(self):
        return self.pw1.params() + self.pw2.params() + self.rgb.params()

    @property
    def out_channels(self):
        return self.rgb.out_channels

    @property
    def in_channels(self):
        return self.pw1.in_channels

    @property
    def hidden(self):
        return self.pw1.out_channels

    @property
    def stride(self):
        return self.rgb.stride

    @property
    def padding(self):
        return self.rgb.padding

    def forward(self, x):
        x4, squeeze = _batched(x)
        if x4.shape[1] != self.in_channels:
            raise ShapeError(f"input has {x4.shape[1]} channels, layer expects {self.in_channels}")
        out = self.rgb.forward(self.pw2.forward(self.act.forward(self.pw1.forward(x4))))
        return out[0] if squeeze else out

    def backward(self, dout):
        d4, _ = _batched(dout)
        return self.pw1.backward(self.act.backward(self.pw2.backward(self.rgb.backward(d4))))

    def dense_bank(self) -> np.ndarray:
        return self.rgb.weight.value


class ScratchFirstLayer(Conv2dLayer):
    """Full-width dense first layer trained from scratch; bias stays frozen."""

    kind = "scratch"

    def __init__(self, weight, bias=None, stride=1, padding=0, prefix="first"):
        super().__init__(
            Param(f"{prefix}.weight", weight, True),
            Param(f"{prefix}.bias", bias, False) if bias is not None else None,
            stride=stride, padding=padding,
        )

    def dense_bank(self) -> np.ndarray:
        return self.weight.value


def cp_pipeline_forward(adapted: AdaptedLayer, x, stride=1, padding=0) -> np.ndarray:
    """Run the CP separable pipeline on one image or a batch."""
    return CpFirstLayer(adapted, stride=stride, padding=padding).forward(x)


def tucker_pipeline_forward(adapted: AdaptedLayer, x, stride=1, padding=0) -> np.ndarray:
    """Run the Tucker pointwise + grouped pipeline on one image or a batch."""
    return TuckerFirstLayer(adapted, stride=stride, padding=padding).forward(x)


def reduce_hidden_width(in_channels: int, out_channels: int, rank: int) -> int:
    """Hidden width whose pointwise weight count matches the decomposed layer's."""
    return max(1, round(rank * out_channels * in_channels / (in_channels + 3)))


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


def build_reduce(in_channels: int, rgb: FilterBank, hidden: int | None = None,
                 rank: int = 2, seed: int = 0, stride=1, padding=0) -> ReduceFirstLayer:
    """Reduce baseline: two trainable 1x1 convs with a ReLU between, then the frozen RGB conv.

    ``hidden`` defaults to the width that matches the decomposed layer's
    trainable weight count for the given rank.
    """
    if in_channels < 1:
        raise ShapeError("in_channels must be >= 1")
    m = hidden if hidden is not None else reduce_hidden_width(in_channels, rgb.out_channels, rank)
    if m < 1:
        raise ShapeError("hidden width must be >= 1")
    if rgb.in_channels != 3:
        raise ShapeError(f"Reduce projects to 3 channels but the RGB bank has {rgb.in_channels}")
    rng = np.random.default_rng(seed)
    w1 = _fan_in_uniform(rng, (m, in_channels, 1, 1), in_channels)
    w2 = _fan_in_uniform(rng, (3, m, 1, 1), m)
    return ReduceFirstLayer(w1, np.zeros(m), w2, np.zeros(3), rgb,
                            stride=stride, padding=padding)


def build_scratch(in_channels: int, rgb: FilterBank, seed: int = 0,
                  stride=1, padding=0) -> ScratchFirstLayer:
    """Scratch baseline: dense first layer of the original geometry at the new width."""
    if in_channels < 1:
        raise ShapeError("in_channels must be >= 1")
    c_out, _, k1, k2 = rgb.weights.shape
    rng = np.random.default_rng(seed)
    weight = _fan_in_uniform(rng, (c_out, in_channels, k1, k2), in_channels * k1 * k2)
    return ScratchFirstLayer(weight, rgb.bias, stride=stride, padding=padding)
