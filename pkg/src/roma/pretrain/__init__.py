"""Two-scale objective, AdamW with a cosine schedule, the training loop and checkpoints."""
from roma.pretrain.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from roma.pretrain.loss import LossBreakdown, cluster_loss, combine, token_loss, total_loss
from roma.pretrain.optim import FULL_SCALE_LR, OptimState, adamw_step, cosine_lr
from roma.pretrain.trainer import MetricsWriter, Pretrainer, TrainConfig, sample_rng

__all__ = [
    "Checkpoint", "LossBreakdown", "MetricsWriter", "OptimState", "FULL_SCALE_LR", "Pretrainer", "TrainConfig",
    "adamw_step", "cluster_loss", "combine", "cosine_lr", "load_checkpoint", "sample_rng", "save_checkpoint",
    "token_loss", "total_loss",
]
