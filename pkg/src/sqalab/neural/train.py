"""MSE training loop with seeded shuffling and per-epoch validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateInput, InvalidInput
from ..metrics import mse, pcc
from ..seeds import stream_rng
from .layers import Dropout, mse_loss
from .model import Model
from .optim import Adam


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    best_val: bool = False


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_mse: float
    val_pcc: float


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = math.inf


def predict_batched(model: Model, x: np.ndarray,
                    batch_size: int = 32) -> np.ndarray:
    """Inference-mode predictions for stacked features [N, F, B]."""
    preds = []
    for i in range(0, len(x), batch_size):
        out = model.forward(x[i:i + batch_size][:, None, :, :], training=False)
        preds.append(np.asarray(out[:, 0], dtype=np.float64))
    return np.concatenate(preds)


def evaluate(model: Model, x: np.ndarray, y: np.ndarray,
             batch_size: int = 32):
    """(MSE, PCC) on a split; PCC is NaN when either side is constant."""
    preds = predict_batched(model, x, batch_size)
    err = mse(preds, y)
    try:
        corr = pcc(preds, y)
    except DegenerateInput:
        corr = float("nan")
    return err, corr


def train_model(model: Model, train_x: np.ndarray, train_y: np.ndarray,
                val_x: np.ndarray, val_y: np.ndarray, cfg: TrainConfig,
                on_epoch=None) -> TrainResult:
    """Train in place; returns per-epoch stats.

    The final parameters are the last epoch's unless cfg.best_val asks
    for the lowest-validation-MSE snapshot. `on_epoch(stats)` fires
    after each epoch for logging.
    """
    if len(train_x) == 0:
        raise InvalidInput("empty training split")
    if len(train_x) != len(train_y) or len(val_x) != len(val_y):
        raise InvalidInput("features and labels must align")
    train_y = np.asarray(train_y, dtype=np.float64)
    val_y = np.asarray(val_y, dtype=np.float64)

    shuffle_rng = stream_rng(cfg.seed, "shuffle")
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dropout):
            layer.rng = stream_rng(cfg.seed, "dropout", i)

    params = [arr for _, arr in model.parameters()]
    grads = [arr for _, arr in model.gradients()]
    # best-val restoration must also roll back BatchNorm running stats
    snapshot_targets = params + [arr for _, arr in model.state_tensors()]
    opt = Adam(params, lr=cfg.lr)
    result = TrainResult()
    best_snapshot = None

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_x))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = train_x[idx][:, None, :, :]
            pred = model.forward(xb, training=True)
            loss, dpred = mse_loss(pred[:, 0], train_y[idx])
            model.backward(dpred[:, None])
            opt.step(grads)
            total += loss * len(idx)
            seen += len(idx)
        val_mse, val_pcc = evaluate(model, val_x, val_y, cfg.batch_size)
        stats = EpochStats(epoch, total / seen, val_mse, val_pcc)
        result.history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if val_mse < result.best_val_mse:
            result.best_val_mse = val_mse
            result.best_epoch = epoch
            if cfg.best_val:
                best_snapshot = [p.copy() for p in snapshot_targets]

    if cfg.best_val and best_snapshot is not None:
        for p, snap in zip(snapshot_targets, best_snapshot):
            p[:] = snap
    return result
