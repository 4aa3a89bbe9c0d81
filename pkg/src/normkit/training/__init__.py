from .data import Dataset, DatasetHandle, load_dataset, read_idx_images, read_idx_labels
from .losses import cross_entropy_loss, l1_activation_penalty, total_objective
from .loop import MetricsRecord, TrainConfig, evaluate, fit, train_epoch
from .optim import OptimizerState, optimizer_step

__all__ = [
    "Dataset", "DatasetHandle", "load_dataset", "read_idx_images", "read_idx_labels",
    "cross_entropy_loss", "l1_activation_penalty", "total_objective",
    "MetricsRecord", "TrainConfig", "evaluate", "fit", "train_epoch",
    "OptimizerState", "optimizer_step",
]
