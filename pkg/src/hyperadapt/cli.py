"""Command line: decompose -> adapt -> train -> rank-sweep -> export-filters.

Every command is deterministic given its flags. Exit codes: 0 success,
1 I/O problems (missing or malformed files), 2 usage problems (bad flags or
config), 3 numerical failures (non-finite loss, failed gradient check).
Output files are written atomically. The ``HYPERADAPT_THREADS`` environment
variable caps internal parallelism (rank sweeps, per-filter decompositions);
results never depend on it.

Run configurations are plain ``key = value`` files; ``#`` starts a comment.
See :data:`RunConfig` for the keys and their defaults.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text, thread_count
from .data import (
    apply_stats,
    load_tiles,
    normalize,
    synth_filter_bank,
    synth_spectral_task,
)
from .decomp import CP, TUCKER, CpOptions, decompose_bank, load_decomps, save_decomps
from .errors import (
    DataError,
    FormatError,
    NumericalError,
    ShapeError,
    UnsupportedKindError,
    UsageError,
)
from .filteradapt import INIT_POLICIES, FilterBank, adapt, save_adapted
from .nn import (
    TrainConfig,
    build_model,
    build_reduce,
    build_scratch,
    count_trainable,
    first_layer_from_adapted,
    load_model,
    save_model,
    train,
    write_log_csv,
)
from .nn.gradcheck import gradient_check
from .tensor import load_tensor

__all__ = ["main", "RunConfig", "parse_config", "METHODS"]

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

METHODS = ("cp", "tucker", "reduce", "scratch")


@dataclass(frozen=True)
class RunConfig:
    """Training-run configuration; defaults mirror the standard protocol."""

    method: str = "cp"
    rank: int = 2
    init: str = "interp"
    hidden: int = 0          # reduce baseline width; 0 = match decomposed trainables
    pool: int = 1
    stride: int = 1
    padding: int = 0
    lr0: float = 0.01
    gamma: float = 0.95
    batch: int = 128
    epochs: int = 100
    seed: int = 0
    restarts: int = 4
    tol: float = 1e-9
    max_iters: int = 500
    train_tiles: str = ""    # TLS1 path; empty = synthesize
    test_tiles: str = ""
    synth_channels: int = 64
    synth_classes: int = 4
    synth_samples: int = 200
    synth_tile: int = 16
    synth_noise: float = 0.1
    synth_seed: int = 0
    bank: str = ""           # TNS1 path for the RGB bank; empty = synthesize
    bank_bias: str = ""
    bank_filters: int = 8
    bank_kernel: int = 5
    bank_seed: int = 0
    out_model: str = "model.mdl1"
    out_log: str = "train_log.csv"


_CONVERTERS = {
    "method": str, "rank": int, "init": str, "hidden": int, "pool": int,
    "stride": int, "padding": int,
    "lr0": float, "gamma": float, "batch": int, "epochs": int, "seed": int,
    "restarts": int, "tol": float, "max_iters": int,
    "train_tiles": str, "test_tiles": str,
    "synth_channels": int, "synth_classes": int, "synth_samples": int,
    "synth_tile": int, "synth_noise": float, "synth_seed": int,
    "bank": str, "bank_bias": str, "bank_filters": int, "bank_kernel": int,
    "bank_seed": int,
    "out_model": str, "out_log": str,
}


def parse_config(path: str) -> RunConfig:
    """Parse a key=value config file into a validated RunConfig."""
    values = {}
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key = value")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in _CONVERTERS:
                raise UsageError(f"{path}:{ln}: unknown key {key!r}")
            try:
                values[key] = _CONVERTERS[key](val)
            except ValueError:
                raise UsageError(f"{path}:{ln}: bad value {val!r} for {key}") from None
    cfg = RunConfig(**values)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    if cfg.method not in METHODS:
        raise UsageError(f"method must be one of {METHODS}, got {cfg.method!r}")
    if cfg.init not in INIT_POLICIES:
        raise UsageError(f"init must be one of {INIT_POLICIES}, got {cfg.init!r}")
    if cfg.rank < 1:
        raise UsageError("rank must be >= 1")
    if cfg.pool < 1:
        raise UsageError("pool target must be >= 1")
    if cfg.lr0 <= 0 or not 0 < cfg.gamma <= 1:
        raise UsageError("need lr0 > 0 and 0 < gamma <= 1")
    if cfg.batch < 1 or cfg.epochs < 0:
        raise UsageError("need batch >= 1 and epochs >= 0")
    if bool(cfg.train_tiles) != bool(cfg.test_tiles):
        raise UsageError("train_tiles and test_tiles must be given together")


def _load_task(cfg: RunConfig):
    if cfg.train_tiles:
        train_ts = load_tiles(cfg.train_tiles)
        test_ts = load_tiles(cfg.test_tiles)
    else:
        train_ts, test_ts = synth_spectral_task(
            cfg.synth_channels, cfg.synth_classes, cfg.synth_samples,
            seed=cfg.synth_seed, tile=cfg.synth_tile, noise=cfg.synth_noise,
        )
    train_ts = normalize(train_ts)
    test_ts = apply_stats(test_ts, train_ts.stats)
    return train_ts, test_ts


def _load_bank(cfg: RunConfig) -> FilterBank:
    if cfg.bank:
        weights = load_tensor(cfg.bank)
        bias = load_tensor(cfg.bank_bias) if cfg.bank_bias else None
        return FilterBank(weights, bias)
    return synth_filter_bank(cfg.bank_filters, cfg.bank_kernel, cfg.bank_seed)


def _build_first_layer(cfg: RunConfig, bank: FilterBank, channels: int):
    if cfg.method in (CP, TUCKER):
        opts = CpOptions(tol=cfg.tol, max_iters=cfg.max_iters,
                         restarts=cfg.restarts, seed=cfg.seed)
        decomps, _ = decompose_bank(bank, cfg.method, cfg.rank, opts)
        layer = adapt(decomps, channels, init=cfg.init, seed=cfg.seed, bias=bank.bias)
        return first_layer_from_adapted(layer, stride=cfg.stride, padding=cfg.padding)
    if cfg.method == "reduce":
        return build_reduce(channels, bank, hidden=cfg.hidden or None, rank=cfg.rank,
                            seed=cfg.seed, stride=cfg.stride, padding=cfg.padding)
    return build_scratch(channels, bank, seed=cfg.seed,
                         stride=cfg.stride, padding=cfg.padding)


def _run_training(cfg: RunConfig):
    train_ts, test_ts = _load_task(cfg)
    bank = _load_bank(cfg)
    first = _build_first_layer(cfg, bank, train_ts.channels)
    classes = int(max(train_ts.labels.max(), test_ts.labels.max())) + 1
    model = build_model(first, classes, pool=(cfg.pool, cfg.pool), seed=cfg.seed)
    tc = TrainConfig(lr0=cfg.lr0, gamma=cfg.gamma, batch_size=cfg.batch,
                     epochs=cfg.epochs, seed=cfg.seed)
    rows = train(model, train_ts.tiles, train_ts.labels,
                 test_ts.tiles, test_ts.labels, tc)
    return model, rows


# ---------------------------------------------------------------- commands

def cmd_decompose(args) -> int:
    bank = FilterBank(load_tensor(args.bank),
                      load_tensor(args.bias) if args.bias else None)
    opts = CpOptions(tol=args.tol, max_iters=args.max_iters,
                     restarts=args.restarts, seed=args.seed)
    decomps, errors = decompose_bank(bank, args.kind, args.rank, opts)
    save_decomps(args.out, decomps, errors)
    for o, err in enumerate(errors):
        print(f"filter {o}: relative error {err:.3e}")
    print(f"mean relative error: {errors.mean():.3e}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    kind, decomps, _ = load_decomps(args.decomp)
    bias = load_tensor(args.bias) if args.bias else None
    layer = adapt(decomps, args.channels, init=args.init, seed=args.seed, bias=bias)
    save_adapted(args.out, layer)
    c_out, ch, rank = layer.spectral.shape
    print(f"{kind} layer: {c_out} filters, {ch} channels, rank {rank}; "
          f"{c_out * ch * rank} trainable spectral values")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    _validate_config(cfg)
    model, rows = _run_training(cfg)
    write_log_csv(rows, cfg.out_log)
    save_model(model, cfg.out_model, meta={
        "method": cfg.method, "rank": str(cfg.rank), "init": cfg.init,
        "seed": str(cfg.seed), "stride": str(cfg.stride),
        "padding": str(cfg.padding),
        "pool_h": str(cfg.pool), "pool_w": str(cfg.pool),
    })
    final = rows[-1] if rows else None
    if final:
        print(f"epochs: {len(rows)}  final test accuracy: {final[4]:.4f}  "
              f"trainable parameters: {count_trainable(model)}")
    print(f"wrote {cfg.out_model} and {cfg.out_log}")
    return EXIT_OK


def cmd_rank_sweep(args) -> int:
    cfg = parse_config(args.config)
    if cfg.method not in (CP, TUCKER):
        raise UsageError("rank sweeps apply to the decomposed methods (cp, tucker)")
    ranks = []
    for part in args.ranks.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            r = int(part)
        except ValueError:
            raise UsageError(f"bad rank {part!r}") from None
        if r < 1:
            raise UsageError("ranks must be >= 1")
        if r in ranks:
            raise UsageError(f"duplicate rank {r}")
        ranks.append(r)
    if not ranks:
        raise UsageError("no ranks given")
    if args.seeds < 1:
        raise UsageError("need at least one seed")

    jobs = [(rank, cfg.seed + s) for rank in ranks for s in range(args.seeds)]

    def run(job):
        rank, seed = job
        sub = replace(cfg, rank=rank, seed=seed)
        model, rows = _run_training(sub)
        return rank, rows[-1][4] if rows else 0.0, count_trainable(model)

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    lines = ["rank,mean_accuracy,sem,trainable_params"]
    for rank in ranks:
        accs = np.array([acc for r, acc, _ in results if r == rank])
        params = next(p for r, _, p in results if r == rank)
        sem = float(accs.std(ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else 0.0
        lines.append(f"{rank},{accs.mean():.12g},{sem:.12g},{params}")
        print(f"rank {rank}: accuracy {accs.mean():.4f} +/- {sem:.4f} "
              f"({params} trainable)")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def _filter_to_pixels(img2d: np.ndarray) -> np.ndarray:
    # Symmetric mapping around zero so sign structure survives; a zero filter
    # becomes uniform mid-gray.
    peak = float(np.abs(img2d).max())
    if peak == 0.0:
        return np.full(img2d.shape, 128, dtype=np.uint8)
    scaled = np.rint(127.5 + 127.5 * img2d / peak)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def _write_pgm(path: str, img: np.ndarray) -> None:
    h, w = img.shape
    atomic_write_bytes(path, b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def cmd_export_filters(args) -> int:
    model, _ = load_model(args.model)
    bank = model.first.dense_bank()
    os.makedirs(args.out_dir, exist_ok=True)
    c_out = bank.shape[0]
    pooled = bank.mean(axis=1)  # average over the channel dimension
    for o in range(c_out):
        _write_pgm(os.path.join(args.out_dir, f"filter_{o:03d}.pgm"),
                   _filter_to_pixels(pooled[o]))
    cols = int(math.ceil(math.sqrt(c_out)))
    rows = int(math.ceil(c_out / cols))
    kh, kw = pooled.shape[1], pooled.shape[2]
    canvas = np.zeros((rows * (kh + 1) + 1, cols * (kw + 1) + 1), dtype=np.uint8)
    for o in range(c_out):
        r, c = divmod(o, cols)
        canvas[1 + r * (kh + 1):1 + r * (kh + 1) + kh,
               1 + c * (kw + 1):1 + c * (kw + 1) + kw] = _filter_to_pixels(pooled[o])
    _write_pgm(os.path.join(args.out_dir, "composite.pgm"), canvas)
    print(f"wrote {c_out} filter images and composite.pgm to {args.out_dir}")
    return EXIT_OK


def _micro_model(method: str, seed: int = 0):
    channels, c_out, kernel, rank = 8, 4, 5, 2
    bank = synth_filter_bank(c_out, kernel, seed=seed)
    cfg = RunConfig(method=method, rank=rank, seed=seed)
    first = _build_first_layer(cfg, bank, channels)
    model = build_model(first, classes=3, pool=(1, 1), seed=seed)
    rng = np.random.default_rng([seed, 7])
    batch = rng.standard_normal((4, channels, 12, 12))
    labels = rng.integers(0, 3, 4)
    return model, batch, labels


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = parse_config(args.config)
        methods = [cfg.method]
        seed = cfg.seed
    else:
        methods = list(METHODS)
        seed = args.seed or 0
    failed = False
    for method in methods:
        model, batch, labels = _micro_model(method, seed)
        worst = gradient_check(model, batch, labels, eps=args.eps)
        for name, err in sorted(worst.items()):
            ok = err <= args.tol
            failed = failed or not ok
            print(f"{method:8s} {name:20s} worst relative error {err:.3e} "
                  f"{'ok' if ok else 'FAIL'}")
    if failed:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERICAL
    print("gradient check passed")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperadapt",
        description="Adapt RGB filter banks to hyperspectral inputs via "
                    "partially trainable tensor decompositions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose a filter bank (TNS1 -> DCP1)")
    p.add_argument("--bank", required=True, help="TNS1 file with (C_out, 3, k1, k2) weights")
    p.add_argument("--bias", default="", help="optional TNS1 file with (C_out,) bias")
    p.add_argument("--kind", choices=(CP, TUCKER), required=True)
    p.add_argument("--rank", type=_positive_int, required=True)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iters", type=_positive_int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("adapt", help="widen spectral components (DCP1 -> ADP1)")
    p.add_argument("--decomp", required=True)
    p.add_argument("--channels", type=_positive_int, required=True)
    p.add_argument("--init", choices=INIT_POLICIES, default="interp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias", default="", help="optional TNS1 file with (C_out,) bias")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("train", help="train per a config file (-> MDL1 + CSV log)")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--epochs", type=int, default=None, help="override the config epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank-sweep", help="train across ranks and seeds (-> CSV)")
    p.add_argument("--config", required=True)
    p.add_argument("--ranks", required=True, help="comma-separated, e.g. 1,2,3")
    p.add_argument("--seeds", type=int, default=3, help="repetitions per rank")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_sweep)

    p = sub.add_parser("export-filters", help="write one PGM per filter plus a composite")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_filters)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--config", default="", help="check only this config's method")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, ShapeError, DataError, UnsupportedKindError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
