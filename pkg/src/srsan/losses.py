"""Training objectives over softmax item probabilities.

Two forms are available:

``ce``
    categorical cross-entropy, ``-log p[target]``.
``literal``
    the per-item binary cross-entropy sum applied to the softmax output,
    ``-sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)]``.

Both are averaged over the batch.  Log arguments are clamped to
``[CLAMP, 1 - CLAMP]``.
"""

from __future__ import annotations

import numpy as np

from .nncore import softmax_grad

CLAMP = 1e-12


def _one_hot(targets: np.ndarray, n_items: int, dtype) -> np.ndarray:
    targets = np.asarray(targets)
    if np.any(targets < 1) or np.any(targets > n_items):
        raise ValueError(f"targets must be item indices in [1, {n_items}]")
    y = np.zeros((len(targets), n_items), dtype=dtype)
    y[np.arange(len(targets)), targets - 1] = 1
    return y


def loss(probs: np.ndarray, targets: np.ndarray, mode: str = "ce") -> float:
    """Mean loss over rows of ``probs``; ``targets`` are 1-based item indices."""
    probs = np.atleast_2d(probs)
    targets = np.atleast_1d(targets)
    p = np.clip(probs.astype(np.float64), CLAMP, 1 - CLAMP)
    rows = np.arange(len(targets))
    if mode == "ce":
        per_row = -np.log(p[rows, targets - 1])
    elif mode == "literal":
        y = _one_hot(targets, probs.shape[1], np.float64)
        per_row = -(y * np.log(p) + (1 - y) * np.log1p(-p)).sum(axis=1)
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    return float(per_row.mean())


def loss_grad_probs(probs: np.ndarray, targets: np.ndarray, mode: str = "ce") -> np.ndarray:
    """d(mean loss)/d(probs); entries where the clamp is active get zero."""
    B = len(targets)
    y = _one_hot(targets, probs.shape[1], probs.dtype)
    inside = (probs > CLAMP) & (probs < 1 - CLAMP)
    p = np.clip(probs, CLAMP, 1 - CLAMP)
    if mode == "ce":
        g = -y / p
    elif mode == "literal":
        g = -y / p + (1 - y) / (1 - p)
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    return np.where(inside, g, 0).astype(probs.dtype) / B


def loss_grad_scores(probs: np.ndarray, targets: np.ndarray, mode: str = "ce") -> np.ndarray:
    """d(mean loss)/d(scores) through the output softmax."""
    if mode == "ce":
        # closed form; avoids dividing by tiny probabilities
        y = _one_hot(targets, probs.shape[1], probs.dtype)
        return (probs - y) / len(targets)
    return softmax_grad(probs, loss_grad_probs(probs, targets, mode))
