"""Training loop with the exponentially decaying learning-rate schedule.

One epoch: seeded shuffle, cross-entropy forward/backward per batch, one
Adam step per batch at lr0 * gamma**epoch, then a full evaluation pass on
the held-out tiles. Every epoch appends a log row (epoch, lr, train_loss,
test_loss, test_accuracy); the CSV writer emits them with a header so loss
curves can be re-plotted directly. No weight decay, early stopping or
augmentation. Everything is deterministic given (seed, config, data).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._io import atomic_write_text
from ..errors import NumericalError
from .model import Model, cross_entropy, forward_backward
from .optim import Adam

__all__ = ["TrainConfig", "train", "evaluate", "write_log_csv", "LOG_HEADER"]

LOG_HEADER = ("epoch", "lr", "train_loss", "test_loss", "test_accuracy")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    gamma: float = 0.95
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def evaluate(model: Model, tiles: np.ndarray, labels: np.ndarray, batch_size: int = 256):
    """Mean loss and accuracy over a tile set, without touching gradients."""
    n = tiles.shape[0]
    total_loss = 0.0
    correct = 0.0
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        logits = model.forward(tiles[sl])
        loss, _, acc = cross_entropy(logits, labels[sl])
        count = sl.stop - sl.start
        total_loss += loss * count
        correct += acc * count
    return total_loss / n, correct / n


def train(model: Model, train_tiles, train_labels, test_tiles, test_labels,
          cfg: TrainConfig) -> list[tuple]:
    """Train in place; returns one log row per epoch."""
    train_tiles = np.asarray(train_tiles, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    test_tiles = np.asarray(test_tiles, dtype=np.float64)
    test_labels = np.asarray(test_labels)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.trainable_params())
    n = train_tiles.shape[0]
    rows = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr0 * cfg.gamma ** epoch
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for bidx, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            loss, _, _ = forward_backward(model, train_tiles[idx], train_labels[idx])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {bidx}"
                )
            opt.step(lr)
            epoch_loss += loss * len(idx)
        test_loss, test_acc = evaluate(model, test_tiles, test_labels)
        rows.append((epoch, lr, epoch_loss / n, test_loss, test_acc))
    return rows


def write_log_csv(rows, path: str) -> None:
    lines = [",".join(LOG_HEADER)]
    for epoch, lr, train_loss, test_loss, test_acc in rows:
        lines.append(f"{epoch},{lr:.12g},{train_loss:.12g},{test_loss:.12g},{test_acc:.12g}")
    atomic_write_text(path, "\n".join(lines) + "\n")
