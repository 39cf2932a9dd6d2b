"""Session-based next-item recommendation with self-attention networks."""

from .data import Session, Vocabulary, augment_prefixes, batch_iter, preprocess
from .evaluation import MetricsReport, evaluate, hr_at_k, mrr_at_k, popularity_baseline, rank_of_target
from .model import ModelConfig, backward, forward, init_params, predict_probs
from .trainer import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "TrainConfig", "Session", "Vocabulary", "MetricsReport",
    "init_params", "forward", "backward", "predict_probs", "fit", "evaluate",
    "augment_prefixes", "batch_iter", "preprocess",
    "rank_of_target", "hr_at_k", "mrr_at_k", "popularity_baseline",
]
