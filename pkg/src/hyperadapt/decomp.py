"""CP and single-mode Tucker decompositions of individual order-3 filters.

A filter is a (channels x k1 x k2) tensor. Two decompositions are offered:

* CP of rank R: a sum of R rank-one tensors, each an outer product of a
  spectral vector (length channels), a vertical tap vector (k1) and a
  horizontal tap vector (k2). Computed by alternating least squares; the
  spatial tap columns are normalized to unit length with all scale pulled
  into the spectral columns, so the spectral side unambiguously owns scale.

* Tucker over the channel mode only, rank R: a core tensor (R x k1 x k2)
  times an orthonormal channel factor (channels x R). Because only one mode
  is compressed this is exactly the truncated SVD of the mode-0 unfolding,
  which is already optimal for that mode; no iteration exists or is needed.

``decompose_bank`` applies either one filter-by-filter across a 4-way
weight bank and reads/writes the ``DCP1`` container documented below.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_bytes, expect_magic, pack_u32s, read_exact, read_u32s, thread_count
from .errors import FormatError, ShapeError
from .linalg import lstsq_gram, svd
from .tensor import as_tensor, frobenius_norm, khatri_rao, mode_product, unfold

__all__ = [
    "CP",
    "TUCKER",
    "CpOptions",
    "CpDecomp",
    "Tucker1Decomp",
    "cp_decompose",
    "cp_reconstruct",
    "tucker1_decompose",
    "tucker1_reconstruct",
    "decompose_bank",
    "save_decomps",
    "load_decomps",
    "DCP_MAGIC",
]

CP = "cp"
TUCKER = "tucker"
DCP_MAGIC = b"DCP1"
_KIND_TAGS = {CP: 0, TUCKER: 1}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


@dataclass(frozen=True)
class CpOptions:
    """Stopping and restart policy for the alternating least squares loop."""

    tol: float = 1e-9       # stop when the relative error changes less than this per sweep
    max_iters: int = 500
    restarts: int = 4       # random restarts tried in addition to the deterministic init
    seed: int = 0


@dataclass
class CpDecomp:
    """Rank-R CP factors of one filter.

    ``x`` and ``y`` columns are unit-norm; ``spectral`` columns carry all
    scale. ``sweep_errors`` records the relative error after each ALS sweep
    of the winning run (monotonically non-increasing).
    """

    spectral: np.ndarray  # (channels, R)
    x: np.ndarray         # (k1, R)
    y: np.ndarray         # (k2, R)
    rank: int
    relative_error: float
    degenerate: bool = False
    sweep_errors: list = field(default_factory=list)

    def reconstruct(self) -> np.ndarray:
        return cp_reconstruct(self)


@dataclass
class Tucker1Decomp:
    """Channel-mode Tucker factors of one filter: core (R, k1, k2), spectral (channels, R)."""

    core: np.ndarray
    spectral: np.ndarray
    rank: int
    relative_error: float
    degenerate: bool = False

    def reconstruct(self) -> np.ndarray:
        return tucker1_reconstruct(self)


def cp_reconstruct(d: CpDecomp) -> np.ndarray:
    """Sum of rank-one terms: out[c, i, j] = sum_r spectral[c, r] x[i, r] y[j, r]."""
    return np.einsum("cr,ir,jr->cij", d.spectral, d.x, d.y)


def tucker1_reconstruct(d: Tucker1Decomp) -> np.ndarray:
    """Channel-mode product of the core with the spectral factor."""
    return mode_product(d.core, d.spectral, 0)


def _unit_basis_columns(length: int, rank: int) -> np.ndarray:
    cols = np.zeros((length, rank))
    for r in range(rank):
        cols[r % length, r] = 1.0
    return cols


def _solve_factor(unf: np.ndarray, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Least-squares update of one factor given the other two: the normal
    # equations use the Hadamard product of grams, solved pseudo-inversely
    # so collinear columns cannot crash a sweep.
    kr = khatri_rao(f, g)
    gram = (f.T @ f) * (g.T @ g)
    return lstsq_gram(gram, kr.T @ unf.T).T


def _pull_scale(factor: np.ndarray, spectral: np.ndarray):
    # Normalize nonzero columns to unit length, pushing the scale into the
    # spectral factor. Zero columns are left alone (their term is zero).
    norms = np.linalg.norm(factor, axis=0)
    nz = norms > 0
    factor = factor.copy()
    spectral = spectral.copy()
    factor[:, nz] /= norms[nz]
    spectral[:, nz] *= norms[nz]
    return factor, spectral


def _hosvd_init(filt: np.ndarray, rank: int, rng: np.random.Generator):
    factors = []
    for mode in range(3):
        u, _, _ = svd(unfold(filt, mode))
        have = min(rank, u.shape[1])
        f = u[:, :have]
        if have < rank:
            f = np.hstack([f, rng.standard_normal((f.shape[0], rank - have))])
        factors.append(np.ascontiguousarray(f))
    return factors


def _als_run(filt, rank, init, tol, max_iters, norm_t):
    u0, u1, u2 = unfold(filt, 0), unfold(filt, 1), unfold(filt, 2)
    a, b, c = init
    errors = []
    prev = None
    for _ in range(max_iters):
        a = _solve_factor(u0, b, c)
        b = _solve_factor(u1, a, c)
        b, a = _pull_scale(b, a)
        c = _solve_factor(u2, a, b)
        c, a = _pull_scale(c, a)
        err = frobenius_norm(filt - np.einsum("cr,ir,jr->cij", a, b, c)) / norm_t
        errors.append(err)
        if prev is not None and abs(prev - err) < tol:
            break
        prev = err
    return a, b, c, errors


def cp_decompose(filt: np.ndarray, rank: int, opts: CpOptions | None = None,
                 stream: int = 0) -> CpDecomp:
    """Rank-R CP decomposition of an order-3 filter via ALS with restarts.

    Runs once from a deterministic init (leading singular vectors of each
    unfolding) and ``opts.restarts`` more times from seeded random inits,
    keeping the best fit. ``stream`` separates random streams when many
    filters share one options object (as ``decompose_bank`` does); results
    depend only on (filter, rank, opts.seed, stream).

    A zero filter cannot be fit: the result carries zero spectral columns,
    arbitrary unit spatial columns and ``degenerate=True``.
    """
    filt = as_tensor(filt)
    if filt.ndim != 3:
        raise ShapeError(f"cp_decompose expects an order-3 filter, got order {filt.ndim}")
    if rank < 1:
        raise ShapeError("rank must be >= 1")
    opts = opts or CpOptions()
    ch, k1, k2 = filt.shape
    norm_t = frobenius_norm(filt)
    if norm_t == 0.0:
        return CpDecomp(
            spectral=np.zeros((ch, rank)),
            x=_unit_basis_columns(k1, rank),
            y=_unit_basis_columns(k2, rank),
            rank=rank,
            relative_error=0.0,
            degenerate=True,
        )

    best = None
    for ridx in range(opts.restarts + 1):
        rng = np.random.default_rng([opts.seed, stream, ridx])
        if ridx == 0:
            init = _hosvd_init(filt, rank, rng)
        else:
            init = [rng.standard_normal((n, rank)) for n in (ch, k1, k2)]
        a, b, c, errors = _als_run(filt, rank, init, opts.tol, opts.max_iters, norm_t)
        if best is None or errors[-1] < best[3][-1]:
            best = (a, b, c, errors)

    a, b, c, errors = best
    b, a = _pull_scale(b, a)
    c, a = _pull_scale(c, a)
    # Replace any collapsed spatial column with an arbitrary unit vector;
    # its spectral column is zeroed so the term still contributes nothing.
    for factor, k in ((b, k1), (c, k2)):
        dead = np.linalg.norm(factor, axis=0) == 0
        if dead.any():
            a[:, dead] = 0.0
            factor[:, dead] = _unit_basis_columns(k, rank)[:, dead]
    return CpDecomp(
        spectral=a, x=b, y=c, rank=rank,
        relative_error=errors[-1], sweep_errors=errors,
    )


def tucker1_decompose(filt: np.ndarray, rank: int) -> Tucker1Decomp:
    """Channel-mode Tucker decomposition: truncated SVD of the mode-0 unfolding.

    ``rank`` is clamped to the channel count. The relative error equals the
    root of the discarded singular energy, which is optimal for this mode.
    """
    filt = as_tensor(filt)
    if filt.ndim != 3:
        raise ShapeError(f"tucker1_decompose expects an order-3 filter, got order {filt.ndim}")
    if rank < 1:
        raise ShapeError("rank must be >= 1")
    ch = filt.shape[0]
    r = min(rank, ch)
    u, _, _ = svd(unfold(filt, 0))
    spectral = np.ascontiguousarray(u[:, :r])
    core = mode_product(filt, spectral.T, 0)
    norm_t = frobenius_norm(filt)
    if norm_t == 0.0:
        return Tucker1Decomp(core=core, spectral=spectral, rank=r,
                             relative_error=0.0, degenerate=True)
    err = frobenius_norm(filt - mode_product(core, spectral, 0)) / norm_t
    return Tucker1Decomp(core=core, spectral=spectral, rank=r, relative_error=err)


def decompose_bank(bank, kind: str, rank: int, opts: CpOptions | None = None):
    """Decompose every filter of a (C_out, C_in, k1, k2) bank independently.

    Returns (decomps, errors) with one decomposition and one relative error
    per output channel. Filters are processed in parallel when
    HYPERADAPT_THREADS > 1; results depend only on (bank, kind, rank,
    opts.seed), never on the thread count.
    """
    weights = as_tensor(getattr(bank, "weights", bank))
    if weights.ndim != 4:
        raise ShapeError(f"filter bank must be order 4, got order {weights.ndim}")
    if kind not in _KIND_TAGS:
        raise ShapeError(f"unknown decomposition kind {kind!r}")
    opts = opts or CpOptions()

    if kind == CP:
        def one(o):
            return cp_decompose(weights[o], rank, opts, stream=o)
    else:
        def one(o):
            return tucker1_decompose(weights[o], rank)

    c_out = weights.shape[0]
    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            decomps = list(pool.map(one, range(c_out)))
    else:
        decomps = [one(o) for o in range(c_out)]
    errors = np.array([d.relative_error for d in decomps])
    return decomps, errors


def save_decomps(path: str, decomps, errors=None) -> None:
    """Write per-filter decompositions as a DCP1 file.

    Layout: magic ``b"DCP1"``, u32 kind (0=CP, 1=Tucker), u32 C_out, C_in,
    k1, k2, R, then per filter the components as little-endian float64 in
    row-major order (CP: spectral (C_in x R), x (k1 x R), y (k2 x R);
    Tucker: spectral (C_in x R), core (R x k1 x k2)), then C_out relative
    errors.
    """
    if not decomps:
        raise ShapeError("cannot save an empty decomposition list")
    first = decomps[0]
    is_cp = isinstance(first, CpDecomp)
    kind = CP if is_cp else TUCKER
    ch = first.spectral.shape[0]
    rank = first.rank
    if is_cp:
        k1, k2 = first.x.shape[0], first.y.shape[0]
    else:
        k1, k2 = first.core.shape[1], first.core.shape[2]
    if errors is None:
        errors = [d.relative_error for d in decomps]

    buf = io.BytesIO()
    buf.write(DCP_MAGIC)
    buf.write(pack_u32s(_KIND_TAGS[kind], len(decomps), ch, k1, k2, rank))
    for d in decomps:
        buf.write(np.ascontiguousarray(d.spectral, dtype="<f8").tobytes())
        if is_cp:
            buf.write(np.ascontiguousarray(d.x, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(d.y, dtype="<f8").tobytes())
        else:
            buf.write(np.ascontiguousarray(d.core, dtype="<f8").tobytes())
    buf.write(np.asarray(errors, dtype="<f8").tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_decomps(path: str):
    """Read a DCP1 file; returns (kind, decomps, errors)."""
    with open(path, "rb") as f:
        expect_magic(f, DCP_MAGIC)
        tag, c_out, ch, k1, k2, rank = read_u32s(f, 6, "decomposition header")
        if tag not in _TAG_KINDS:
            raise FormatError(f"unknown decomposition kind tag {tag}")
        kind = _TAG_KINDS[tag]

        def block(shape, what):
            n = int(np.prod(shape, dtype=np.int64))
            raw = read_exact(f, 8 * n, what)
            return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

        parts = []
        for o in range(c_out):
            spectral = block((ch, rank), f"filter {o} spectral")
            if kind == CP:
                x = block((k1, rank), f"filter {o} x")
                y = block((k2, rank), f"filter {o} y")
                parts.append((spectral, x, y))
            else:
                core = block((rank, k1, k2), f"filter {o} core")
                parts.append((spectral, core))
        errors = np.frombuffer(read_exact(f, 8 * c_out, "errors"), dtype="<f8").copy()

    decomps = []
    for o in range(c_out):
        if kind == CP:
            spectral, x, y = parts[o]
            decomps.append(CpDecomp(
                spectral=spectral, x=x, y=y, rank=rank,
                relative_error=float(errors[o]),
                degenerate=not spectral.any(),
            ))
        else:
            spectral, core = parts[o]
            decomps.append(Tucker1Decomp(
                core=core, spectral=spectral, rank=rank,
                relative_error=float(errors[o]),
                degenerate=not core.any(),
            ))
    return kind, decomps, errors
