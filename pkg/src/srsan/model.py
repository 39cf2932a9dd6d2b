"""Self-attention session recommender: forward pass, backward pass, scoring.

Shapes used throughout::

    B  batch size          n  padded session length
    d  embedding size      h  heads, dk = d // h
    V  vocabulary size (candidate items are indices 1..V, 0 is padding)

Parameters live in a plain ``dict[str, np.ndarray]``; ``param_names`` gives
the canonical order (the same order the checkpoint format uses).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .losses import loss_grad_scores
from .nncore import masked_row_softmax, matmul_grads, relu, relu_grad, sigmoid, softmax_grad

Params = dict[str, np.ndarray]

PREDICTION_MODES = ("last", "se")
LOSS_MODES = ("ce", "literal")
LAYER_TENSORS = ("Wq", "Wk", "Wv", "Wo", "W1", "b1", "W2", "b2")
SE_TENSORS = ("Wg1", "Wg2", "q", "c", "W3")
INIT_STD = 0.1


@dataclass
class ModelConfig:
    vocab_size: int
    d: int = 96
    heads: int = 2
    layers: int = 1
    ffn_mult: int = 4
    prediction_mode: str = "last"
    loss_mode: str = "ce"
    scale_per_head: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d", "heads", "layers", "ffn_mult"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.prediction_mode not in PREDICTION_MODES:
            raise ValueError(f"prediction_mode must be one of {PREDICTION_MODES}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def ffn_width(self) -> int:
        return self.ffn_mult * self.d

    @property
    def scale(self) -> float:
        # the literal form divides by sqrt(d), not sqrt(d / h)
        return math.sqrt(self.head_dim if self.scale_per_head else self.d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


def param_names(config: ModelConfig) -> list[str]:
    names = ["embed"]
    for layer in range(config.layers):
        names += [f"layer{layer}.{t}" for t in LAYER_TENSORS]
    if config.prediction_mode == "se":
        names += [f"se.{t}" for t in SE_TENSORS]
    return names


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, w = config.d, config.ffn_width
    per_layer = {"Wq": (d, d), "Wk": (d, d), "Wv": (d, d), "Wo": (d, d),
                 "W1": (d, w), "b1": (w,), "W2": (w, d), "b2": (d,)}
    se = {"Wg1": (d, d), "Wg2": (d, d), "q": (d,), "c": (d,), "W3": (2 * d, d)}
    shapes = {}
    for name in param_names(config):
        if name == "embed":
            shapes[name] = (config.vocab_size + 1, d)
        else:
            group, tensor = name.split(".")
            shapes[name] = se[tensor] if group == "se" else per_layer[tensor]
    return shapes


def init_params(config: ModelConfig, dtype=np.float32) -> Params:
    """Draw every trainable entry from N(0, 0.1^2); the padding row is zero."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        params[name] = (rng.standard_normal(shape) * INIT_STD).astype(dtype)
    params["embed"][0] = 0
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    # (B, n, d) -> (B, h, n, dk); head i owns columns [i*dk, (i+1)*dk)
    B, n, d = x.shape
    return x.reshape(B, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, h, n, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, h * dk)


def key_mask(lengths: np.ndarray, n: int) -> np.ndarray:
    """Boolean (B, n) mask, True for real items under right padding."""
    return np.arange(n)[None, :] < np.asarray(lengths)[:, None]


def attention_head(params: Params, config: ModelConfig, x: np.ndarray, head: int, layer: int,
                   mask: np.ndarray | None = None) -> np.ndarray:
    """One attention head of one layer for a single (n, d) session matrix."""
    if not 0 <= head < config.heads:
        raise ValueError(f"head index {head} out of range for {config.heads} heads")
    cols = slice(head * config.head_dim, (head + 1) * config.head_dim)
    p = f"layer{layer}."
    q = x @ params[p + "Wq"][:, cols]
    k = x @ params[p + "Wk"][:, cols]
    v = x @ params[p + "Wv"][:, cols]
    probs = masked_row_softmax(q @ k.T / config.scale, mask)
    return probs @ v


def multi_head(params: Params, config: ModelConfig, x: np.ndarray, layer: int,
               mask: np.ndarray | None = None) -> np.ndarray:
    heads = [attention_head(params, config, x, i, layer, mask) for i in range(config.heads)]
    return np.concatenate(heads, axis=-1) @ params[f"layer{layer}.Wo"] + x


def ffn_block(params: Params, f: np.ndarray, layer: int) -> np.ndarray:
    p = f"layer{layer}."
    hidden = relu(f @ params[p + "W1"] + params[p + "b1"])
    return hidden @ params[p + "W2"] + params[p + "b2"] + f


@dataclass
class LayerCache:
    x: np.ndarray  # layer input (B, n, d)
    q: np.ndarray  # (B, h, n, dk)
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray  # (B, h, n, n)
    concat: np.ndarray  # (B, n, d)
    f: np.ndarray
    pre_act: np.ndarray  # (B, n, ffn_width)
    hidden: np.ndarray


@dataclass
class ForwardCache:
    indices: np.ndarray
    lengths: np.ndarray
    mask: np.ndarray
    layers: list[LayerCache] = field(default_factory=list)
    out: np.ndarray | None = None  # final H (B, n, d)
    h_last: np.ndarray | None = None  # (B, d)
    session: np.ndarray | None = None  # vector actually scored against items (B, d)
    se: dict | None = None


def _layer_forward(params: Params, config: ModelConfig, x: np.ndarray, mask: np.ndarray,
                   layer: int) -> tuple[np.ndarray, LayerCache]:
    p = f"layer{layer}."
    h = config.heads
    q = _split_heads(x @ params[p + "Wq"], h)
    k = _split_heads(x @ params[p + "Wk"], h)
    v = _split_heads(x @ params[p + "Wv"], h)
    logits = q @ k.swapaxes(-1, -2) / np.asarray(config.scale, dtype=x.dtype)
    probs = masked_row_softmax(logits, mask[:, None, None, :])
    concat = _merge_heads(probs @ v)
    f = concat @ params[p + "Wo"] + x
    pre_act = f @ params[p + "W1"] + params[p + "b1"]
    hidden = relu(pre_act)
    out = hidden @ params[p + "W2"] + params[p + "b2"] + f
    return out, LayerCache(x, q, k, v, probs, concat, f, pre_act, hidden)


def check_indices(indices: np.ndarray, lengths: np.ndarray, vocab_size: int) -> None:
    if indices.ndim != 2:
        raise ValueError(f"indices must be (batch, length), got shape {indices.shape}")
    if np.any(lengths < 1) or np.any(lengths > indices.shape[1]):
        raise ValueError("every session length must be in [1, padded length]")
    if indices.size and (indices.min() < 0 or indices.max() > vocab_size):
        raise ValueError(f"item index out of range [0, {vocab_size}]")
    valid = key_mask(lengths, indices.shape[1])
    if np.any(indices[valid] == 0):
        raise ValueError("padding index 0 inside the valid part of a session")


def forward(params: Params, config: ModelConfig, indices: np.ndarray,
            lengths: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Score every candidate item for each session in a right-padded batch.

    Returns ``scores`` of shape (B, V); column ``j`` is item index ``j + 1``.
    """
    indices = np.asarray(indices)
    lengths = np.asarray(lengths)
    check_indices(indices, lengths, config.vocab_size)
    mask = key_mask(lengths, indices.shape[1])
    cache = ForwardCache(indices, lengths, mask)
    x = params["embed"][indices]
    for layer in range(config.layers):
        x, lc = _layer_forward(params, config, x, mask, layer)
        cache.layers.append(lc)
    cache.out = x
    cache.h_last = x[np.arange(len(lengths)), lengths - 1]
    if config.prediction_mode == "se":
        cache.session = _se_forward(params, cache)
    else:
        cache.session = cache.h_last
    scores = cache.session @ params["embed"][1:].T
    return scores, cache


def _se_forward(params: Params, cache: ForwardCache) -> np.ndarray:
    out, h_last, mask = cache.out, cache.h_last, cache.mask
    gate_in = out @ params["se.Wg1"] + (h_last @ params["se.Wg2"])[:, None, :] + params["se.c"]
    gate = sigmoid(gate_in)
    alpha = gate @ params["se.q"]  # (B, n)
    alpha = np.where(mask, alpha, 0).astype(out.dtype)
    s_global = np.einsum("bn,bnd->bd", alpha, out)
    joined = np.concatenate([s_global, h_last], axis=-1)
    cache.se = {"gate": gate, "alpha": alpha, "joined": joined}
    return joined @ params["se.W3"]


def session_embedding_variant(params: Params, config: ModelConfig, cache: ForwardCache) -> np.ndarray:
    """Scores from the composed (global + last-item) session embedding.

    The global vector pools every valid position with soft-attention weights
    ``q . sigmoid(Wg1 h_j + Wg2 h_n + c)``; the session vector is
    ``W3 [s_global; h_n]``.
    """
    if config.prediction_mode != "se":
        raise ValueError("session_embedding_variant needs prediction_mode='se'")
    session = _se_forward(params, cache)
    return session @ params["embed"][1:].T


def predict_probs(scores: np.ndarray) -> np.ndarray:
    return masked_row_softmax(scores)


def backward(params: Params, config: ModelConfig, cache: ForwardCache, scores: np.ndarray,
             targets: np.ndarray, loss_mode: str | None = None) -> Params:
    """Gradients of the mean batch loss w.r.t. every parameter.

    ``targets`` are 1-based item indices.  The embedding table collects
    gradient from both the input lookup and the tied scoring matrix.
    """
    loss_mode = loss_mode or config.loss_mode
    grads = zeros_like_params(params)
    probs = predict_probs(scores)
    d_scores = loss_grad_scores(probs, targets, loss_mode)
    return backward_from_scores(params, config, cache, d_scores, grads)


def backward_from_scores(params: Params, config: ModelConfig, cache: ForwardCache,
                         d_scores: np.ndarray, grads: Params | None = None) -> Params:
    if grads is None:
        grads = zeros_like_params(params)
    items = params["embed"][1:]
    # scores = session @ items.T
    d_session = d_scores @ items
    grads["embed"][1:] += d_scores.T @ cache.session

    B = len(cache.lengths)
    d_out = np.zeros_like(cache.out)
    rows = np.arange(B)
    if config.prediction_mode == "se":
        d_h_last = _se_backward(params, cache, d_session, grads, d_out)
    else:
        d_h_last = d_session
    d_out[rows, cache.lengths - 1] += d_h_last

    dx = d_out
    for layer in reversed(range(config.layers)):
        dx = _layer_backward(params, config, cache.layers[layer], cache.mask, layer, dx, grads)

    np.add.at(grads["embed"], cache.indices, dx)
    grads["embed"][0] = 0
    return grads


def _se_backward(params: Params, cache: ForwardCache, d_session: np.ndarray, grads: Params,
                 d_out: np.ndarray) -> np.ndarray:
    se = cache.se
    out, h_last, mask = cache.out, cache.h_last, cache.mask
    d = h_last.shape[-1]
    grads["se.W3"] += se["joined"].T @ d_session
    d_joined = d_session @ params["se.W3"].T
    d_global, d_h_last = d_joined[:, :d], d_joined[:, d:].copy()

    # s_global = sum_j alpha_j h_j
    d_alpha = np.einsum("bd,bnd->bn", d_global, out)
    d_alpha = np.where(mask, d_alpha, 0).astype(out.dtype)
    d_out += se["alpha"][:, :, None] * d_global[:, None, :]

    # alpha = gate @ q
    gate = se["gate"]
    grads["se.q"] += np.einsum("bn,bnd->d", d_alpha, gate)
    d_gate = d_alpha[:, :, None] * params["se.q"]
    d_gate_in = d_gate * gate * (1 - gate)

    grads["se.c"] += d_gate_in.sum(axis=(0, 1))
    grads["se.Wg1"] += np.einsum("bni,bnj->ij", out, d_gate_in)
    d_out += d_gate_in @ params["se.Wg1"].T
    d_gate_sum = d_gate_in.sum(axis=1)  # h_last term is broadcast over positions
    grads["se.Wg2"] += h_last.T @ d_gate_sum
    d_h_last += d_gate_sum @ params["se.Wg2"].T
    return d_h_last


def _layer_backward(params: Params, config: ModelConfig, lc: LayerCache, mask: np.ndarray,
                    layer: int, d_out: np.ndarray, grads: Params) -> np.ndarray:
    p = f"layer{layer}."
    # out = hidden @ W2 + b2 + f
    d_f = d_out.copy()
    grads[p + "b2"] += d_out.sum(axis=(0, 1))
    d_hidden, gW2 = matmul_grads(lc.hidden, params[p + "W2"], d_out)
    grads[p + "W2"] += gW2
    d_pre = relu_grad(lc.pre_act, d_hidden)
    grads[p + "b1"] += d_pre.sum(axis=(0, 1))
    d_f_ffn, gW1 = matmul_grads(lc.f, params[p + "W1"], d_pre)
    grads[p + "W1"] += gW1
    d_f += d_f_ffn

    # f = concat @ Wo + x
    d_x = d_f.copy()
    d_concat, gWo = matmul_grads(lc.concat, params[p + "Wo"], d_f)
    grads[p + "Wo"] += gWo

    # per-head: heads = probs @ v, probs = softmax(q k^T / scale)
    d_heads = _split_heads(d_concat, config.heads)
    d_probs, d_v = matmul_grads(lc.probs, lc.v, d_heads)
    d_logits = softmax_grad(lc.probs, d_probs, mask[:, None, None, :])
    d_logits = d_logits / np.asarray(config.scale, dtype=d_logits.dtype)
    d_q = d_logits @ lc.k
    d_k = d_logits.swapaxes(-1, -2) @ lc.q

    for name, d_proj in (("Wq", d_q), ("Wk", d_k), ("Wv", d_v)):
        d_proj = _merge_heads(d_proj)
        d_x_proj, g = matmul_grads(lc.x, params[p + name], d_proj)
        grads[p + name] += g
        d_x += d_x_proj
    return d_x
