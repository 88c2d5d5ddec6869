"""Goal-conditioned procedure planning with twin transformers and beam search."""

from .attention import AttentionConfig, build_mask, scaled_dot_attention
from .envgen import Dataset, TaskGraph, generate_dataset, generate_task_family, oracle_plan
from .estimators import PlaTePlanner, RandomPlanner, RetrievalPlanner
from .evaluation import MetricsReport, compounding_error, miou, success_rate, top1_accuracy
from .model import ModelConfig, PlaTeModel, training_loss
from .planner import BeamConfig, admissible_extensions, beam_search, discrepancy_gap, greedy_search

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "BeamConfig", "Dataset", "MetricsReport", "ModelConfig", "PlaTeModel",
    "PlaTePlanner", "RandomPlanner", "RetrievalPlanner", "TaskGraph", "admissible_extensions",
    "beam_search", "build_mask", "compounding_error", "discrepancy_gap", "generate_dataset",
    "generate_task_family", "greedy_search", "miou", "oracle_plan", "scaled_dot_attention",
    "success_rate", "top1_accuracy", "training_loss",
]
