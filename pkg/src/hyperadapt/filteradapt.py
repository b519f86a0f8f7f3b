"""Swap 3-channel spectral components for trainable wide-channel ones.

Given per-filter decompositions of a pretrained RGB filter bank, ``adapt``
produces an :class:`AdaptedLayer`: the spatial parts (separable taps for CP,
cores for Tucker) are copied verbatim, marked read-only and never updated by
training; the spectral parts are re-initialized at the new channel count and
are the only first-layer parameters that train. ``decompress`` turns the
layer back into a dense (C_out, new_channels, k1, k2) bank.

Spectral initialization policies:

* ``interp`` (default) - piecewise-linear interpolation of the original
  spectral values across the new channel positions (endpoints aligned),
  scaled by old/new channel count so the response to a channel-constant
  input is approximately preserved. At the original channel count this is
  exactly the identity.
* ``replicate`` - tile the original values across the new channels, same
  scaling.
* ``random`` - zero-mean normal with sigma = |original column| / sqrt(new
  channels), per column.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_bytes, expect_magic, pack_u32s, read_exact, read_u32s
from .decomp import CP, TUCKER, CpDecomp, Tucker1Decomp
from .errors import FormatError, ShapeError, UnsupportedKindError
from .linalg import lstsq_gram
from .tensor import as_tensor

__all__ = [
    "FilterBank",
    "AdaptedLayer",
    "INIT_POLICIES",
    "adapt",
    "decompress",
    "spatial_span_residual",
    "core_span_residual",
    "save_adapted",
    "load_adapted",
    "ADP_MAGIC",
]

ADP_MAGIC = b"ADP1"
INIT_POLICIES = ("interp", "replicate", "random")
_KIND_TAGS = {CP: 0, TUCKER: 1}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


@dataclass
class FilterBank:
    """Pretrained first-layer weights (C_out, C_in, k1, k2) with optional bias."""

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        if self.weights.ndim != 4:
            raise ShapeError(f"filter bank must be order 4, got order {self.weights.ndim}")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weights.shape[0],):
                raise ShapeError(
                    f"bias length {self.bias.shape} does not match {self.weights.shape[0]} filters"
                )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class AdaptedLayer:
    """Frozen spatial parts plus trainable wide-channel spectral parts.

    CP layers carry per-filter tap matrices ``x`` (C_out, k1, R) and ``y``
    (C_out, k2, R); Tucker layers carry per-filter cores (C_out, R, k1, k2).
    ``spectral`` is (C_out, new_channels, R) for both kinds. The spatial
    arrays and bias are stored read-only; training may write only
    ``spectral``.
    """

    kind: str
    spectral: np.ndarray
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    core: np.ndarray | None = None
    bias: np.ndarray | None = None
    init: str = "interp"
    seed: int = 0
    rank_warning: bool = False

    @property
    def out_channels(self) -> int:
        return self.spectral.shape[0]

    @property
    def new_channels(self) -> int:
        return self.spectral.shape[1]

    @property
    def rank(self) -> int:
        return self.spectral.shape[2]

    @property
    def kernel(self) -> tuple[int, int]:
        if self.kind == CP:
            return self.x.shape[1], self.y.shape[1]
        return self.core.shape[2], self.core.shape[3]


def _channel_positions(n: int) -> np.ndarray:
    # Endpoint-aligned positions on [0, 1]; a single channel sits midway.
    if n == 1:
        return np.array([0.5])
    return np.linspace(0.0, 1.0, n)


def _expand_column(col: np.ndarray, new_channels: int, init: str,
                   rng: np.random.Generator) -> np.ndarray:
    old = col.shape[0]
    scale = old / new_channels
    if init == "interp":
        return np.interp(_channel_positions(new_channels), _channel_positions(old), col) * scale
    if init == "replicate":
        reps = -(-new_channels // old)
        return np.tile(col, reps)[:new_channels] * scale
    if init == "random":
        sigma = float(np.linalg.norm(col)) / np.sqrt(new_channels)
        return rng.normal(0.0, sigma, new_channels) if sigma > 0 else np.zeros(new_channels)
    raise ShapeError(f"unknown init policy {init!r}; expected one of {INIT_POLICIES}")


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    out.flags.writeable = False
    return out


def adapt(decomps, new_channels: int, init: str = "interp", seed: int = 0,
          bias: np.ndarray | None = None) -> AdaptedLayer:
    """Build an adapted layer from per-filter decompositions.

    Spatial parts are copied verbatim and frozen; spectral parts of width
    ``new_channels`` are initialized per policy. With ``interp`` and the
    original channel count, the layer decompresses to exactly the source
    reconstruction. A Tucker adaptation with new_channels < rank is allowed
    but flagged (``rank_warning``): the spectral factor can no longer have
    orthonormal columns.
    """
    if new_channels < 1:
        raise ShapeError("new channel count must be >= 1")
    if init not in INIT_POLICIES:
        raise ShapeError(f"unknown init policy {init!r}; expected one of {INIT_POLICIES}")
    if not decomps:
        raise ShapeError("need at least one per-filter decomposition")
    is_cp = isinstance(decomps[0], CpDecomp)
    if not all(isinstance(d, CpDecomp if is_cp else Tucker1Decomp) for d in decomps):
        raise ShapeError("mixed decomposition kinds in one layer")
    source_channels = decomps[0].spectral.shape[0]
    if source_channels != 3:
        raise ShapeError(
            f"adaptation expects decompositions of a 3-channel (RGB) bank, "
            f"got {source_channels} channels"
        )

    rng = np.random.default_rng(seed)
    rank = decomps[0].rank
    spectral = np.empty((len(decomps), new_channels, rank))
    for o, d in enumerate(decomps):
        for r in range(rank):
            spectral[o, :, r] = _expand_column(d.spectral[:, r], new_channels, init, rng)

    rank_warning = False
    if not is_cp and new_channels < rank:
        rank_warning = True
        warnings.warn(
            f"adapting a rank-{rank} Tucker layer to {new_channels} channels: "
            "the spectral factor cannot keep orthonormal columns",
            stacklevel=2,
        )

    bias_arr = None
    if bias is not None:
        bias_arr = _frozen(np.asarray(bias, dtype=np.float64))
        if bias_arr.shape != (len(decomps),):
            raise ShapeError(f"bias length {bias_arr.shape} does not match {len(decomps)} filters")

    if is_cp:
        x = _frozen(np.stack([d.x for d in decomps]))
        y = _frozen(np.stack([d.y for d in decomps]))
        return AdaptedLayer(kind=CP, spectral=spectral, x=x, y=y, bias=bias_arr,
                            init=init, seed=seed)
    core = _frozen(np.stack([d.core for d in decomps]))
    return AdaptedLayer(kind=TUCKER, spectral=spectral, core=core, bias=bias_arr,
                        init=init, seed=seed, rank_warning=rank_warning)


def decompress(layer: AdaptedLayer) -> np.ndarray:
    """Dense (C_out, new_channels, k1, k2) bank with the wide spectral parts in place."""
    if layer.kind == CP:
        return np.einsum("ocr,oir,ojr->ocij", layer.spectral, layer.x, layer.y)
    return np.einsum("ocr,oruv->ocuv", layer.spectral, layer.core)


def _span_residual(slices: np.ndarray, basis: np.ndarray) -> float:
    # Worst over channels of the relative residual after projecting each
    # spatial slice onto the span of the basis patterns; 0/0 counts as 0.
    r = basis.shape[0]
    b = basis.reshape(r, -1).T
    gram = b.T @ b
    coef = lstsq_gram(gram, b.T @ slices.reshape(slices.shape[0], -1).T)
    resid = slices.reshape(slices.shape[0], -1).T - b @ coef
    num = np.linalg.norm(resid, axis=0)
    den = np.linalg.norm(slices.reshape(slices.shape[0], -1), axis=1)
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(out.max())


def spatial_span_residual(layer: AdaptedLayer, o: int) -> float:
    """How far filter ``o``'s channel slices stray from the frozen separable patterns.

    For a CP layer, every channel slice of the decompressed filter must be a
    linear combination of the rank-one patterns x_r y_r^T; the returned value
    is the worst relative projection residual over channels (0 for a healthy
    layer, regardless of how the spectral parts have been trained).
    """
    if layer.kind != CP:
        raise UnsupportedKindError(
            "spatial_span_residual applies to CP layers; use core_span_residual for Tucker"
        )
    basis = np.einsum("ir,jr->rij", layer.x[o], layer.y[o])
    slices = np.einsum("cr,ir,jr->cij", layer.spectral[o], layer.x[o], layer.y[o])
    return _span_residual(slices, basis)


def core_span_residual(layer: AdaptedLayer, o: int) -> float:
    """Tucker analogue: residual of channel slices against the span of core slices."""
    if layer.kind != TUCKER:
        raise UnsupportedKindError(
            "core_span_residual applies to Tucker layers; use spatial_span_residual for CP"
        )
    slices = np.einsum("cr,ruv->cuv", layer.spectral[o], layer.core[o])
    return _span_residual(slices, layer.core[o])


_INIT_TAGS = {name: i for i, name in enumerate(INIT_POLICIES)}


def save_adapted(path: str, layer: AdaptedLayer) -> None:
    """Write an ADP1 file.

    Layout: magic ``b"ADP1"``, u32 kind (0=CP, 1=Tucker), u32 C_out,
    new_channels, k1, k2, R, u8 has_bias, then the frozen spatial blob
    (CP: x then y per filter; Tucker: core per filter), the trainable
    spectral blob (per filter, new_channels x R), the bias if present, and
    finally u8 init tag plus u64 seed. All floats little-endian float64.
    """
    k1, k2 = layer.kernel
    buf = io.BytesIO()
    buf.write(ADP_MAGIC)
    buf.write(pack_u32s(_KIND_TAGS[layer.kind], layer.out_channels,
                        layer.new_channels, k1, k2, layer.rank))
    buf.write(struct.pack("<B", 1 if layer.bias is not None else 0))
    if layer.kind == CP:
        buf.write(np.ascontiguousarray(layer.x, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(layer.y, dtype="<f8").tobytes())
    else:
        buf.write(np.ascontiguousarray(layer.core, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(layer.spectral, dtype="<f8").tobytes())
    if layer.bias is not None:
        buf.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    buf.write(struct.pack("<B", _INIT_TAGS.get(layer.init, 0)))
    buf.write(struct.pack("<Q", layer.seed & 0xFFFFFFFFFFFFFFFF))
    atomic_write_bytes(path, buf.getvalue())


def load_adapted(path: str) -> AdaptedLayer:
    """Read an ADP1 file back into an :class:`AdaptedLayer`."""
    with open(path, "rb") as f:
        expect_magic(f, ADP_MAGIC)
        tag, c_out, new_ch, k1, k2, rank = read_u32s(f, 6, "adapted-layer header")
        if tag not in _TAG_KINDS:
            raise FormatError(f"unknown kind tag {tag}")
        kind = _TAG_KINDS[tag]
        (has_bias,) = struct.unpack("<B", read_exact(f, 1, "bias flag"))

        def block(shape, what):
            n = int(np.prod(shape, dtype=np.int64))
            raw = read_exact(f, 8 * n, what)
            return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

        x = y = core = None
        if kind == CP:
            x = _frozen(block((c_out, k1, rank), "x taps"))
            y = _frozen(block((c_out, k2, rank), "y taps"))
        else:
            core = _frozen(block((c_out, rank, k1, k2), "cores"))
        spectral = block((c_out, new_ch, rank), "spectral")
        bias = _frozen(block((c_out,), "bias")) if has_bias else None
        (init_tag,) = struct.unpack("<B", read_exact(f, 1, "init tag"))
        (seed,) = struct.unpack("<Q", read_exact(f, 8, "seed"))
    init = INIT_POLICIES[init_tag] if init_tag < len(INIT_POLICIES) else "interp"
    return AdaptedLayer(kind=kind, spectral=spectral, x=x, y=y, core=core,
                        bias=bias, init=init, seed=int(seed),
                        rank_warning=(kind == TUCKER and new_ch < rank))
