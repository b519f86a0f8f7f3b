"""The desk-scale classification model and its manual backward pass.

Architecture: first layer (any of the four variants) -> ReLU -> frozen 3x3
conv (C_out -> 2*C_out, padding 1) -> ReLU -> adaptive average pool ->
linear classifier. Exactly the first layer's trainable blocks and the
classifier train; gradients still flow through every frozen stage, which is
the property the frozen mid conv exists to exercise.

Checkpoints use the ``MDL1`` container: magic, a key=value metadata text
block (enough to rebuild the architecture), then tagged parameter blocks,
each with its trainability flag.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .._io import atomic_write_bytes, expect_magic, pack_u32s, read_exact, read_u32s
from ..decomp import CP, TUCKER
from ..errors import DataError, FormatError, ShapeError
from ..filteradapt import AdaptedLayer, FilterBank
from .conv import _batched, _pair, adaptive_avg_pool, adaptive_avg_pool_backward
from .layers import (
    Conv2dLayer,
    CpFirstLayer,
    Linear,
    Param,
    ReduceFirstLayer,
    ReLU,
    ScratchFirstLayer,
    TuckerFirstLayer,
    _fan_in_uniform,
)

__all__ = [
    "Model",
    "build_model",
    "first_layer_from_adapted",
    "cross_entropy",
    "forward_backward",
    "count_trainable",
    "save_model",
    "load_model",
    "MDL_MAGIC",
]

MDL_MAGIC = b"MDL1"


class Model:
    """First layer + frozen mid conv + pooling + linear head."""

    def __init__(self, first, mid: Conv2dLayer, pool, head: Linear):
        self.first = first
        self.relu1 = ReLU()
        self.mid = mid
        self.relu2 = ReLU()
        self.pool = _pair(pool)
        self.head = head

    def params(self):
        return self.first.params() + self.mid.params() + self.head.params()

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def trainable_params(self):
        return [p for p in self.params() if p.trainable]

    def zero_grads(self):
        for p in self.params():
            p.grad = None

    @property
    def in_channels(self):
        return self.first.in_channels

    @property
    def num_classes(self):
        return self.head.weight.value.shape[0]

    def forward(self, x) -> np.ndarray:
        x4, _ = _batched(x)
        if x4.shape[1] != self.first.in_channels:
            raise ShapeError(
                f"batch has {x4.shape[1]} channels, model expects {self.first.in_channels}"
            )
        a = self.relu1.forward(self.first.forward(x4))
        b = self.relu2.forward(self.mid.forward(a))
        self._feat_shape = b.shape
        p = adaptive_avg_pool(b, self.pool)
        self._pool_shape = p.shape
        return self.head.forward(p.reshape(p.shape[0], -1))

    def backward(self, dlogits) -> None:
        dflat = self.head.backward(dlogits)
        dp = dflat.reshape(self._pool_shape)
        db = adaptive_avg_pool_backward(dp, self._feat_shape, self.pool)
        da = self.mid.backward(self.relu2.backward(db))
        self.first.backward(self.relu1.backward(da))


def first_layer_from_adapted(adapted: AdaptedLayer, stride=1, padding=0):
    if adapted.kind == CP:
        return CpFirstLayer(adapted, stride=stride, padding=padding)
    return TuckerFirstLayer(adapted, stride=stride, padding=padding)


def build_model(first, classes: int, pool=(1, 1), seed: int = 0) -> Model:
    """Attach the frozen mid conv and a fresh classifier head to a first layer."""
    if classes < 2:
        raise ShapeError("need at least 2 classes")
    c_out = first.out_channels
    c_mid = 2 * c_out
    rng = np.random.default_rng(seed)
    mid_w = _fan_in_uniform(rng, (c_mid, c_out, 3, 3), c_out * 9)
    mid = Conv2dLayer(Param("mid.weight", mid_w, False), None, stride=1, padding=1)
    th, tw = _pair(pool)
    features = c_mid * th * tw
    head_w = _fan_in_uniform(rng, (classes, features), features)
    head = Linear(Param("head.weight", head_w, True),
                  Param("head.bias", np.zeros(classes), True))
    return Model(first, mid, pool, head)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy with log-sum-exp stabilization.

    Returns (loss, dlogits, accuracy); dlogits is the gradient of the mean
    loss, i.e. (softmax - onehot) / batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(
            f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]"
        )
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    logp = (logits - m) - np.log(z)
    idx = np.arange(n)
    loss = float(-logp[idx, labels].mean())
    d = e / z
    d[idx, labels] -= 1.0
    d /= n
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return loss, d, accuracy


def forward_backward(model: Model, batch, labels):
    """One full pass: returns (loss, accuracy, grads for trainable blocks)."""
    model.zero_grads()
    logits = model.forward(batch)
    loss, dlogits, accuracy = cross_entropy(logits, np.asarray(labels))
    model.backward(dlogits)
    grads = {p.name: p.grad for p in model.trainable_params()}
    return loss, accuracy, grads


def count_trainable(model: Model) -> int:
    return int(sum(p.value.size for p in model.trainable_params()))


def save_model(model: Model, path: str, meta: dict | None = None) -> None:
    """Write an MDL1 checkpoint.

    Layout: magic ``b"MDL1"``, u32 metadata length plus UTF-8 ``key=value``
    lines, u32 block count, then per block: u16 name length, name, u8
    trainable flag, u32 order, u32 extents, float64 little-endian data.
    """
    meta = dict(meta or {})
    meta.setdefault("method", getattr(model.first, "kind", "unknown"))
    meta.setdefault("pool_h", str(model.pool[0]))
    meta.setdefault("pool_w", str(model.pool[1]))
    meta.setdefault("classes", str(model.num_classes))
    sh, sw = _pair(getattr(model.first, "stride", 1))
    ph, pw = _pair(getattr(model.first, "padding", 0))
    meta.setdefault("stride", str(sh))
    meta.setdefault("padding", str(ph))
    text = "".join(f"{k}={v}\n" for k, v in sorted(meta.items())).encode("utf-8")

    buf = io.BytesIO()
    buf.write(MDL_MAGIC)
    buf.write(pack_u32s(len(text)))
    buf.write(text)
    params = model.params()
    buf.write(pack_u32s(len(params)))
    for p in params:
        name = p.name.encode("ascii")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<B", 1 if p.trainable else 0))
        buf.write(pack_u32s(p.value.ndim, *p.value.shape))
        buf.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    atomic_write_bytes(path, buf.getvalue())


def _read_blocks(f):
    (count,) = read_u32s(f, 1, "block count")
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", read_exact(f, 2, "block name length"))
        name = read_exact(f, nlen, "block name").decode("ascii")
        (trainable,) = struct.unpack("<B", read_exact(f, 1, "trainable flag"))
        (ndim,) = read_u32s(f, 1, "block order")
        shape = read_u32s(f, ndim, "block extents")
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(read_exact(f, 8 * n, f"block {name}"), dtype="<f8")
        blocks[name] = (bool(trainable), data.reshape(shape).copy())
    return blocks


def load_model(path: str):
    """Read an MDL1 checkpoint; returns (model, meta)."""
    with open(path, "rb") as f:
        expect_magic(f, MDL_MAGIC)
        (mlen,) = read_u32s(f, 1, "metadata length")
        text = read_exact(f, mlen, "metadata").decode("utf-8")
        blocks = _read_blocks(f)

    meta = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            meta[k] = v
    method = meta.get("method", "")
    stride = int(meta.get("stride", "1"))
    padding = int(meta.get("padding", "0"))
    pool = (int(meta.get("pool_h", "1")), int(meta.get("pool_w", "1")))

    def take(name):
        if name not in blocks:
            raise FormatError(f"checkpoint is missing block {name!r}")
        return blocks[name][1]

    def maybe(name):
        return blocks[name][1] if name in blocks else None

    if method == CP:
        adapted = AdaptedLayer(kind=CP, spectral=take("first.spectral"),
                               x=take("first.x"), y=take("first.y"),
                               bias=maybe("first.bias"))
        first = CpFirstLayer(adapted, stride=stride, padding=padding)
    elif method == TUCKER:
        adapted = AdaptedLayer(kind=TUCKER, spectral=take("first.spectral"),
                               core=take("first.core"), bias=maybe("first.bias"))
        first = TuckerFirstLayer(adapted, stride=stride, padding=padding)
    elif method == "reduce":
        rgb = FilterBank(take("first.rgb_weight"), maybe("first.rgb_bias"))
        first = ReduceFirstLayer(take("first.w1"), take("first.b1"),
                                 take("first.w2"), take("first.b2"), rgb,
                                 stride=stride, padding=padding)
    elif method == "scratch":
        first = ScratchFirstLayer(take("first.weight"), maybe("first.bias"),
                                  stride=stride, padding=padding)
    else:
        raise FormatError(f"checkpoint has unknown method {method!r}")

    mid = Conv2dLayer(Param("mid.weight", take("mid.weight"), False), None,
                      stride=1, padding=1)
    head = Linear(Param("head.weight", take("head.weight"), True),
                  Param("head.bias", take("head.bias"), True))
    model = Model(first, mid, pool, head)
    for p in model.params():
        if p.name in blocks:
            p.trainable = blocks[p.name][0]
    return model, meta
