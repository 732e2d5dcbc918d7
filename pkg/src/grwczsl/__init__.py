"""Inductive continual zero-shot learning with generative random walks."""
from .data import Dataset, SyntheticSpec, TaskData, TaskSchedule, build_static_schedule, generate_synthetic
from .estimator import GRWZeroShotClassifier
from .losses import LossWeights
from .trainer import StreamReport, TrainerConfig, TrainerState, train_task_stream

__version__ = "0.1.0"

__all__ = [
    "Dataset", "SyntheticSpec", "TaskData", "TaskSchedule", "build_static_schedule",
    "generate_synthetic", "GRWZeroShotClassifier", "LossWeights", "StreamReport",
    "TrainerConfig", "TrainerState", "train_task_stream",
]
