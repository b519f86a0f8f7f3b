"""Dense multi-way arrays and the index algebra the rest of the package uses.

A tensor here is a plain float64, C-contiguous ``numpy.ndarray`` of order
(ndim) >= 1 with every extent >= 1. One convention is fixed once and relied
on everywhere: row-major layout with the last index fastest. The mode-``m``
unfolding places mode ``m`` on the rows and enumerates the remaining axes in
row-major order along the columns; ``fold`` inverts it bit-exactly. There is
no broadcasting: any shape mismatch is a hard error.

The module also reads/writes the ``TNS1`` container: magic ``b"TNS1"``,
little-endian u32 order, u32 extents, then float64 little-endian data in
row-major order.
"""

from __future__ import annotations

import io

import numpy as np

from ._io import atomic_write_bytes, expect_magic, pack_u32s, read_exact, read_u32s
from .errors import FormatError, ShapeError

__all__ = [
    "as_tensor",
    "unfold",
    "fold",
    "mode_product",
    "outer3",
    "frobenius_norm",
    "khatri_rao",
    "save_tensor",
    "load_tensor",
    "TNS_MAGIC",
]

TNS_MAGIC = b"TNS1"


def as_tensor(a) -> np.ndarray:
    """Coerce to a float64 C-order array; reject order-0 arrays and empty extents."""
    t = np.ascontiguousarray(a, dtype=np.float64)
    if t.ndim < 1:
        raise ShapeError("tensor order must be >= 1")
    if any(e < 1 for e in t.shape):
        raise ShapeError(f"tensor extents must all be >= 1, got {t.shape}")
    return t


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: shape[mode] rows, remaining axes enumerated row-major.

    Column j of the result walks the non-mode indices with the last one
    fastest, matching the memory order of the input.
    """
    t = as_tensor(t)
    if not 0 <= mode < t.ndim:
        raise IndexError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.ascontiguousarray(np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1))


def fold(m: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`; bit-exact round trip for every mode."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise IndexError(f"mode {mode} out of range for shape {shape}")
    m = np.ascontiguousarray(m, dtype=np.float64)
    lead = (shape[mode],) + shape[:mode] + shape[mode + 1 :]
    if m.shape != (shape[mode], int(np.prod(lead[1:], dtype=np.int64))):
        raise ShapeError(f"matrix {m.shape} does not fold into {shape} at mode {mode}")
    return np.ascontiguousarray(np.moveaxis(m.reshape(lead), 0, mode))


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``t`` along ``mode`` by the matrix ``m`` (rows replace that extent)."""
    t = as_tensor(t)
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"mode_product needs a matrix, got order {m.ndim}")
    if not 0 <= mode < t.ndim:
        raise IndexError(f"mode {mode} out of range for order-{t.ndim} tensor")
    if m.shape[1] != t.shape[mode]:
        raise ShapeError(
            f"matrix has {m.shape[1]} columns, tensor extent at mode {mode} is {t.shape[mode]}"
        )
    return np.ascontiguousarray(np.moveaxis(np.tensordot(m, t, axes=(1, mode)), 0, mode))


def outer3(a, b, c) -> np.ndarray:
    """Rank-one order-3 tensor: result[i, j, k] = a[i] * b[j] * c[k]."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or c.ndim != 1:
        raise ShapeError("outer3 takes three vectors")
    return np.einsum("i,j,k->ijk", a, b, c)


def frobenius_norm(t) -> float:
    """Square root of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product: column r is kron(a[:, r], b[:, r])."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("khatri_rao takes two matrices")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    i, r = a.shape
    j, _ = b.shape
    return (a[:, None, :] * b[None, :, :]).reshape(i * j, r)


def save_tensor(t: np.ndarray, path: str) -> None:
    """Write ``t`` as a TNS1 file (atomically)."""
    t = as_tensor(t)
    buf = io.BytesIO()
    buf.write(TNS_MAGIC)
    buf.write(pack_u32s(t.ndim, *t.shape))
    buf.write(t.astype("<f8").tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_tensor(path: str) -> np.ndarray:
    """Read a TNS1 file, failing loudly on truncation or bad extents."""
    with open(path, "rb") as f:
        expect_magic(f, TNS_MAGIC)
        (order,) = read_u32s(f, 1, "tensor order")
        if order < 1:
            raise ShapeError("tensor order must be >= 1")
        shape = read_u32s(f, order, "tensor extents")
        if any(e < 1 for e in shape):
            raise ShapeError(f"tensor extents must all be >= 1, got {shape}")
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(read_exact(f, 8 * count, "tensor data"), dtype="<f8")
        if f.read(1):
            raise FormatError("trailing bytes after tensor data")
    return as_tensor(data.reshape(shape))
