"""Mini-batch training with Adam, step-decayed learning rate and coupled L2."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Batch, Session, batch_iter
from .evaluation import MetricsReport, evaluate
from .losses import loss
from .model import ModelConfig, Params, backward, forward, init_params, predict_probs

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "AdamState", "NonFiniteLossError", "FitResult",
           "loss", "l2_penalty", "lr_at_epoch", "adam_step", "fit"]


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 3
    batch_size: int = 100
    l2: float = 1e-5
    epochs: int = 12
    k: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("decay_every and batch_size must be >= 1, epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, batch: Batch | None = None):
        super().__init__(message)
        self.batch = batch


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


def l2_penalty(params: Params, grads: Params, l2: float) -> Params:
    """Add the gradient of (l2/2)*||theta||^2 to ``grads`` in place.

    The padding row of the embedding table is exempt.
    """
    if l2 == 0:
        return grads
    for name, value in params.items():
        grads[name] += l2 * value
    if "embed" in grads:
        grads["embed"][0] = 0
    return grads


class AdamState:
    """Per-parameter Adam moments with bias correction."""

    def __init__(self, params: Params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params, lr: float) -> None:
        """Update ``params`` in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            params[name] -= (lr * update).astype(params[name].dtype)
        if "embed" in params:
            params["embed"][0] = 0


def adam_step(state: AdamState, params: Params, grads: Params, lr: float) -> None:
    state.step(params, grads, lr)


@dataclass
class FitResult:
    params: Params
    log: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_report: MetricsReport | None = None


def train_step(params: Params, model_config: ModelConfig, batch: Batch, state: AdamState,
               lr: float, l2: float) -> float:
    scores, cache = forward(params, model_config, batch.indices, batch.lengths)
    value = loss(predict_probs(scores), batch.labels, model_config.loss_mode)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value}", batch)
    grads = backward(params, model_config, cache, scores, batch.labels)
    l2_penalty(params, grads, l2)
    state.step(params, grads, lr)
    return value


def fit(model_config: ModelConfig, train: list[Session], train_config: TrainConfig,
        eval_instances: list[Session] | None = None,
        progress: Callable[[dict], None] | None = None,
        params: Params | None = None) -> FitResult:
    """Train and keep the parameters of the epoch with the best MRR@k.

    ``eval_instances`` defaults to the training set.  Ties in MRR keep the
    earlier epoch.  ``progress`` receives each epoch's log record.
    """
    if not train:
        raise ValueError("no training instances")
    if params is None:
        params = init_params(model_config)
    eval_instances = eval_instances if eval_instances is not None else train
    result = FitResult(params=copy.deepcopy(params))
    state = AdamState(params)
    best_mrr = -1.0
    for epoch in range(train_config.epochs):
        start = time.perf_counter()
        lr = lr_at_epoch(train_config, epoch)
        losses = []
        epoch_seed = np.random.SeedSequence([train_config.seed, epoch]).generate_state(1)[0]
        for batch in batch_iter(train, train_config.batch_size, seed=int(epoch_seed)):
            losses.append(train_step(params, model_config, batch, state, lr, train_config.l2))
        report = evaluate(params, model_config, eval_instances, train_config.k)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            f"hr@{train_config.k}": report.hr,
            f"mrr@{train_config.k}": report.mrr,
            "seconds": round(time.perf_counter() - start, 3),
        }
        result.log.append(record)
        if progress is not None:
            progress(record)
        log.info("epoch %d lr=%g loss=%.4f %s", epoch, lr, record["train_loss"], report)
        if report.mrr > best_mrr:
            best_mrr = report.mrr
            result.params = copy.deepcopy(params)
            result.best_epoch = epoch
            result.best_report = report
    return result
