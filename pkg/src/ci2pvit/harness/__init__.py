"""Operational shell: data, checkpoints, configs and training loops."""

from .checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from .config import TrainConfig, read_config, resolve_seed, train_config
from .data import (Dataset, Splits, augment_flip, gen_synthetic, load_dataset, read_ppm,
                   save_dataset, write_ppm)
from .train import (TrainResult, encoder_audit, evaluate, metrics_csv, predict_logits,
                    random_frozen_codec, top1, train_classifier)

__all__ = [
    "Dataset", "Splits", "gen_synthetic", "load_dataset", "save_dataset", "read_ppm", "write_ppm",
    "augment_flip", "TrainConfig", "train_config", "read_config", "resolve_seed",
    "save_checkpoint", "load_checkpoint", "checkpoint_bytes", "parse_checkpoint",
    "TrainResult", "train_classifier", "evaluate", "predict_logits", "top1", "metrics_csv",
    "encoder_audit", "random_frozen_codec",
]
