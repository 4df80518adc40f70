from .model import AttentionUNet, NetConfig
from .optim import PlateauScheduler, adam_init, adam_step, plateau_schedule
from .train import (
    Checkpoint,
    EmptyDataset,
    EpochStats,
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    write_history,
)

__all__ = [
    "AttentionUNet",
    "NetConfig",
    "PlateauScheduler",
    "adam_init",
    "adam_step",
    "plateau_schedule",
    "Checkpoint",
    "EmptyDataset",
    "EpochStats",
    "TrainConfig",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "train",
    "write_history",
]
