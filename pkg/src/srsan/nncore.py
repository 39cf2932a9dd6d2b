"""Dense kernels and their analytic gradients.

Everything here works on numpy arrays.  The kernels accept either a plain
2-D matrix or a stack of matrices with leading batch dimensions; the last
two axes are always (rows, cols).  Masks are boolean arrays over the last
axis (True = real item, False = padding) and broadcast against the logits.
"""

from __future__ import annotations

import numpy as np

# additive penalty for masked logits; exp() of it underflows to exactly 0
MASK_PENALTY = -1e9


class ContractError(ValueError):
    """Raised when a kernel receives inputs that violate its shape contract."""


class DegenerateMaskError(ContractError):
    """Raised when a softmax row has no valid position."""


def _check_matrix(x: np.ndarray, name: str) -> None:
    if x.ndim < 2:
        raise ContractError(f"{name} must have at least 2 dims, got shape {x.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_matrix(a, "a")
    _check_matrix(b, "b")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul shape mismatch: a{a.shape} x b{b.shape}")
    return np.matmul(a, b)


def _mask_for(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-1] != logits.shape[-1]:
        raise ContractError(
            f"mask length {mask.shape[-1]} does not match logits cols {logits.shape[-1]}"
        )
    try:
        np.broadcast_shapes(mask.shape, logits.shape)
    except ValueError as exc:
        raise ContractError(f"mask{mask.shape} does not broadcast to logits{logits.shape}") from exc
    return mask


def masked_row_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax over the last axis, ignoring masked positions.

    Masked logits get ``MASK_PENALTY`` added before the max-shifted
    exponentiation, so their weight comes out as exactly zero.
    """
    _check_matrix(logits, "logits")
    mask = _mask_for(logits, mask)
    if mask is not None:
        if not np.all(np.broadcast_to(mask, logits.shape).any(axis=-1)):
            raise DegenerateMaskError("softmax row with every position masked")
        logits = logits + np.where(mask, 0.0, MASK_PENALTY).astype(logits.dtype)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        # -1e9 may not underflow relative to other huge-negative rows; enforce exact zeros
        e = np.where(mask, e, 0.0).astype(logits.dtype)
    return e / e.sum(axis=-1, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def matmul_grads(a: np.ndarray, b: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``a @ b`` w.r.t. both operands.

    For stacked inputs, ``grad_b`` is returned with the same shape as ``b``;
    if ``b`` was shared across the stack its gradient is summed over it.
    """
    _check_matrix(upstream, "upstream")
    out_shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1])
    if upstream.shape != out_shape:
        raise ContractError(f"upstream{upstream.shape} does not match a@b shape {out_shape}")
    grad_a = np.matmul(upstream, np.swapaxes(b, -1, -2))
    grad_b = np.matmul(np.swapaxes(a, -1, -2), upstream)
    return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def softmax_grad(probs: np.ndarray, upstream: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the loss w.r.t. the logits of a (masked) row softmax."""
    if probs.shape != upstream.shape:
        raise ContractError(f"probs{probs.shape} and upstream{upstream.shape} differ")
    inner = (upstream * probs).sum(axis=-1, keepdims=True)
    g = probs * (upstream - inner)
    mask = _mask_for(probs, mask)
    if mask is not None:
        g = np.where(mask, g, 0.0).astype(probs.dtype)
    return g


def relu_grad(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if x.shape != upstream.shape:
        raise ContractError(f"x{x.shape} and upstream{upstream.shape} differ")
    # subgradient at exactly 0 is taken as 0
    return np.where(x > 0, upstream, 0.0).astype(upstream.dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))
