"""Training loop: seeded minibatch Adam with plateau learning-rate cuts,
keeping the checkpoint with the lowest validation loss.

A dataset here is a pair of arrays: images (N, 1, H, W) and targets
(N, 2, H, W) with {0,1} mask channels (heart, thorax).
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from ..core import CtrError
from .layers import bce_loss
from .model import AttentionUNet, NetConfig
from .optim import PlateauScheduler, adam_init, adam_step

CHECKPOINT_VERSION = 1


class EmptyDataset(CtrError):
    """Training or validation set has no samples."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    min_lr: float = 1e-5
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must be in (0,1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    epoch: int
    val_loss: float
    net_config: NetConfig


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def _check_dataset(name, images, targets):
    if images.shape[0] == 0:
        raise EmptyDataset(f"{name} set is empty")
    if targets.shape[0] != images.shape[0]:
        raise ValueError(f"{name}: {images.shape[0]} images vs {targets.shape[0]} targets")


def mean_loss(model: AttentionUNet, params, images, targets, batch_size: int) -> float:
    total = 0.0
    for start in range(0, images.shape[0], batch_size):
        xb = images[start : start + batch_size]
        tb = targets[start : start + batch_size]
        loss, _ = bce_loss(model.forward(params, xb), tb)
        total += loss * xb.shape[0]
    return total / images.shape[0]


def predict(model: AttentionUNet, params, images, batch_size: int = 8) -> np.ndarray:
    """Probability maps for a stack of images, batched."""
    outs = [
        model.forward(params, images[s : s + batch_size])
        for s in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(outs, axis=0)


def train(train_data, val_data, net_config: NetConfig, train_config: TrainConfig):
    """Returns (best checkpoint, per-epoch history).

    Single-threaded kernels plus a fixed seed make the whole parameter
    trajectory reproducible bit for bit.
    """
    train_x, train_t = train_data
    val_x, val_t = val_data
    _check_dataset("train", train_x, train_t)
    _check_dataset("validation", val_x, val_t)

    model = AttentionUNet(net_config)
    params = model.init_params(train_config.seed)
    state = adam_init(params)
    sched = PlateauScheduler(
        train_config.learning_rate,
        patience=train_config.plateau_patience,
        factor=train_config.plateau_factor,
        min_lr=train_config.min_lr,
    )
    rng = np.random.default_rng(train_config.seed)

    history: list[EpochStats] = []
    best: Checkpoint | None = None
    lr = train_config.learning_rate
    n = train_x.shape[0]
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, train_config.batch_size):
            idx = order[start : start + train_config.batch_size]
            loss, grads = model.loss_and_grads(params, train_x[idx], train_t[idx])
            adam_step(
                params,
                grads,
                state,
                lr,
                beta1=train_config.beta1,
                beta2=train_config.beta2,
                eps=train_config.eps,
            )
            total += loss * idx.size
        train_loss = total / n
        val_loss = mean_loss(model, params, val_x, val_t, train_config.batch_size)
        lr = sched.step(val_loss)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr))
        if best is None or val_loss < best.val_loss:
            best = Checkpoint(
                params={k: v.copy() for k, v in params.items()},
                epoch=epoch,
                val_loss=val_loss,
                net_config=net_config,
            )
    return best, history


# ------------------------------------------------------------ persistence


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Versioned .npz container: named parameter arrays + JSON metadata."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": ckpt.epoch,
        "val_loss": ckpt.val_loss,
        "net_config": asdict(ckpt.net_config),
    }
    arrays = {f"param::{k}": v for k, v in ckpt.params.items()}
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        np.savez(f, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        params = {
            k[len("param::") :]: data[k] for k in data.files if k.startswith("param::")
        }
    return Checkpoint(
        params=params,
        epoch=int(meta["epoch"]),
        val_loss=float(meta["val_loss"]),
        net_config=NetConfig(**meta["net_config"]),
    )


def history_csv_text(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
    for row in history:
        writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss), repr(row.lr)])
    return buf.getvalue()


def write_history(history, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(history_csv_text(history))
    os.replace(tmp, path)
