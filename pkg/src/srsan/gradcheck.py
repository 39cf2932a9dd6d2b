"""Finite-difference verification of the analytic model gradients."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .losses import loss
from .model import INIT_STD, ModelConfig, Params, backward, forward, init_params, predict_probs

EPS = 1e-5
TOLERANCE = 1e-4
# Evaluation point spread.  At the N(0, 0.1^2) training init the query/key
# gradients are ~1e-6 and central differences drown in roundoff; much wider
# than this and ReLU kinks start landing inside the +-EPS stencil.
CHECK_STD = 0.5


@dataclass
class TensorCheck:
    prediction_mode: str
    loss_mode: str
    tensor: str
    rel_error: float
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.rel_error <= TOLERANCE


def tiny_config(prediction_mode: str = "last", loss_mode: str = "ce", seed: int = 0) -> ModelConfig:
    return ModelConfig(vocab_size=20, d=8, heads=2, layers=1, ffn_mult=2,
                       prediction_mode=prediction_mode, loss_mode=loss_mode, seed=seed)


def tiny_batch(config: ModelConfig, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Three right-padded sessions of lengths 4, 2 and 1 over the tiny vocabulary."""
    rng = np.random.default_rng(seed + 1)
    lengths = np.array([4, 2, 1])
    indices = np.zeros((3, 4), dtype=np.int64)
    for r, n in enumerate(lengths):
        indices[r, :n] = rng.integers(1, config.vocab_size + 1, size=n)
    targets = rng.integers(1, config.vocab_size + 1, size=3)
    return indices, lengths, targets


def check_params(config: ModelConfig, std: float = CHECK_STD) -> Params:
    params = init_params(config, dtype=np.float64)
    return {k: v * (std / INIT_STD) for k, v in params.items()}


def batch_loss(params: Params, config: ModelConfig, indices, lengths, targets, l2: float = 0.0) -> float:
    scores, _ = forward(params, config, indices, lengths)
    value = loss(predict_probs(scores), targets, config.loss_mode)
    if l2:
        value += 0.5 * l2 * sum(float((v * v).sum()) for k, v in _trainable(params).items())
    return value


def _trainable(params: Params) -> dict[str, np.ndarray]:
    out = dict(params)
    out["embed"] = params["embed"][1:]
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||)."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-10:
        return float(diff)
    return float(diff / scale)


def numeric_grad(fn, x: np.ndarray, eps: float = EPS, skip_rows: tuple[int, ...] = ()) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        if idx and idx[0] in skip_rows and x.ndim == 2:
            continue
        orig = x[idx]
        x[idx] = orig + eps
        up = fn()
        x[idx] = orig - eps
        down = fn()
        x[idx] = orig
        g[idx] = (up - down) / (2 * eps)
    return g


def check_config(config: ModelConfig, corrupt: str | None = None, seed: int = 0,
                 std: float = CHECK_STD) -> list[TensorCheck]:
    params = check_params(config, std)
    indices, lengths, targets = tiny_batch(config, seed)
    scores, cache = forward(params, config, indices, lengths)
    grads = backward(params, config, cache, scores, targets)
    if corrupt is not None:
        # negative control: perturb one analytic gradient
        grads[corrupt] = grads[corrupt] * 1.01 + 1e-3

    fn = lambda: batch_loss(params, config, indices, lengths, targets)  # noqa: E731
    results = []
    for name, value in params.items():
        skip = (0,) if name == "embed" else ()
        num = numeric_grad(fn, value, skip_rows=skip)
        ana = grads[name]
        if name == "embed":
            num, ana = num[1:], ana[1:]
        results.append(TensorCheck(config.prediction_mode, config.loss_mode, name,
                                   relative_error(ana, num), int(num.size)))
    return results


def run_gradcheck(corrupt: str | None = None, seed: int = 0) -> list[TensorCheck]:
    """Check every tensor for both prediction modes and both loss forms."""
    results = []
    for pred, lm in itertools.product(("last", "se"), ("ce", "literal")):
        results += check_config(tiny_config(pred, lm, seed), corrupt=corrupt, seed=seed)
    return results


def format_report(results: list[TensorCheck]) -> str:
    lines = [f"{'mode':<6}{'loss':<9}{'tensor':<16}{'entries':>8}  {'rel_err':>10}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.prediction_mode:<6}{r.loss_mode:<9}{r.tensor:<16}{r.n_entries:>8}  "
                     f"{r.rel_error:>10.2e}  {status}")
    worst = max(r.rel_error for r in results)
    lines.append(f"max relative error {worst:.2e} (tolerance {TOLERANCE:g})")
    return "\n".join(lines)
