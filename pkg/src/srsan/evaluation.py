"""Next-item ranking metrics: hit rate and mean reciprocal rank at a cutoff."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import Session, batch_iter
from .model import ModelConfig, Params, forward


@dataclass
class MetricsReport:
    k: int
    n_test: int
    n_hit: int
    hr: float
    mrr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def __str__(self) -> str:
        return (f"HR@{self.k} = {100 * self.hr:.2f}%  MRR@{self.k} = {100 * self.mrr:.2f}%  "
                f"({self.n_hit}/{self.n_test} hits)")


def rank_of_target(scores: np.ndarray, label: int) -> int:
    """1-based rank of item ``label`` in one score row (column ``label - 1``).

    Ties are broken by ascending item index.
    """
    scores = np.asarray(scores)
    if not 1 <= label <= scores.shape[-1]:
        raise ValueError(f"label {label} is not a candidate index in [1, {scores.shape[-1]}]")
    return int(ranks_of_targets(scores[None, :], np.array([label]))[0])


def ranks_of_targets(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorised ``rank_of_target`` over the rows of a (B, V) score matrix."""
    labels = np.asarray(labels)
    if np.any(labels < 1) or np.any(labels > scores.shape[1]):
        raise ValueError("labels must be candidate indices in [1, V]")
    rows = np.arange(len(labels))
    target = scores[rows, labels - 1][:, None]
    higher = (scores > target).sum(axis=1)
    before = np.arange(scores.shape[1])[None, :] < (labels - 1)[:, None]
    tied_before = ((scores == target) & before).sum(axis=1)
    return 1 + higher + tied_before


def _check_ranks(ranks) -> np.ndarray:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no ranks to score")
    return ranks


def hr_at_k(ranks, k: int = 20) -> float:
    ranks = _check_ranks(ranks)
    return float(np.mean(ranks <= k))


def mrr_at_k(ranks, k: int = 20) -> float:
    ranks = _check_ranks(ranks)
    # correctly rounded sum, so the value does not depend on evaluation order
    return math.fsum(1.0 / ranks[ranks <= k]) / ranks.size


def report_from_ranks(ranks, k: int = 20) -> MetricsReport:
    ranks = _check_ranks(ranks)
    return MetricsReport(k=k, n_test=int(ranks.size), n_hit=int((ranks <= k).sum()),
                         hr=hr_at_k(ranks, k), mrr=mrr_at_k(ranks, k))


def model_ranks(params: Params, config: ModelConfig, instances: list[Session],
                batch_size: int = 500) -> np.ndarray:
    """Rank of every instance's label under the model, in instance order."""
    out = []
    for batch in batch_iter(instances, batch_size, shuffle=False):
        if batch.indices.max() > config.vocab_size or batch.labels.max() > config.vocab_size:
            raise ValueError(f"instance item index exceeds model vocabulary of {config.vocab_size}")
        scores, _ = forward(params, config, batch.indices, batch.lengths)
        out.append(ranks_of_targets(scores, batch.labels))
    return np.concatenate(out)


def evaluate(params: Params, config: ModelConfig, instances: list[Session], k: int = 20,
             batch_size: int = 500) -> MetricsReport:
    return report_from_ranks(model_ranks(params, config, instances, batch_size), k)


def popularity_scores(train: list[Session], vocab_size: int) -> np.ndarray:
    """Click frequency of each item as a next click (label) in ``train``."""
    counts = np.zeros(vocab_size, dtype=np.float64)
    np.add.at(counts, np.array([s.label for s in train], dtype=np.int64) - 1, 1)
    return counts


def popularity_baseline(train: list[Session], test: list[Session], k: int = 20,
                        vocab_size: int | None = None) -> MetricsReport:
    """Rank every candidate by training popularity, ignoring the session."""
    if vocab_size is None:
        vocab_size = max(max(max(s.items), s.label) for s in train + test)
    scores = popularity_scores(train, vocab_size)
    labels = np.array([s.label for s in test])
    chunks = [ranks_of_targets(np.broadcast_to(scores, (len(part), vocab_size)), part)
              for part in np.array_split(labels, max(1, len(labels) // 1000))]
    return report_from_ranks(np.concatenate(chunks), k)
