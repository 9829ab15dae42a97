"""Temporal multi-head self-attention.

All forward functions broadcast over leading dimensions: ``X`` may be
``(T, D)`` or ``(N, T, D)``, and parameters may carry a leading batch axis of
their own (used by the finite-difference checks). Backward functions assume
``(N, T, D)`` input and parameters without a batch axis.
"""

from __future__ import annotations

import numpy as np

from .config import TagrnConfig


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    # (..., T, D) -> (..., n, T, D/n)
    return np.swapaxes(x.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads)), -2, -3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    x = np.swapaxes(x, -2, -3)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def _project(x, params, name, config):
    y = x @ params[f"attn.w{name}"]
    if config.attention_bias:
        y = y + params[f"attn.b{name}"][..., None, :]
    return y


def attention_forward(X: np.ndarray, params, config: TagrnConfig, return_cache: bool = False):
    """``A = concat_i(softmax(Q_i K_i^T * scale) V_i) @ W_o + b_o`` with no positional term."""
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite attention input")
    Q = _project(X, params, "q", config)
    K = _project(X, params, "k", config)
    V = _project(X, params, "v", config)
    Qh, Kh, Vh = (_split_heads(m, config.heads) for m in (Q, K, V))
    weights = softmax(Qh @ np.swapaxes(Kh, -1, -2) * config.attention_scale)
    C = _merge_heads(weights @ Vh)
    out = _project(C, params, "o", config)
    if return_cache:
        return out, {"X": X, "Qh": Qh, "Kh": Kh, "Vh": Vh, "weights": weights, "C": C}
    return out


def attention_backward(dout: np.ndarray, cache, params, config: TagrnConfig):
    """Gradients of the attention parameters and of the input, given dL/dA."""
    X, C, W = cache["X"], cache["C"], cache["weights"]
    grads = {}
    grads["attn.wo"] = np.einsum("ntd,nte->de", C, dout)
    if config.attention_bias:
        grads["attn.bo"] = dout.sum(axis=(0, 1))
    dC = dout @ params["attn.wo"].T
    dAh = _split_heads(dC, config.heads)
    dW = dAh @ np.swapaxes(cache["Vh"], -1, -2)
    dVh = np.swapaxes(W, -1, -2) @ dAh
    dS = W * (dW - (dW * W).sum(axis=-1, keepdims=True)) * config.attention_scale
    dQh = dS @ cache["Kh"]
    dKh = np.swapaxes(dS, -1, -2) @ cache["Qh"]
    dX = np.zeros_like(X)
    for name, dh in (("q", dQh), ("k", dKh), ("v", dVh)):
        d = _merge_heads(dh)
        grads[f"attn.w{name}"] = np.einsum("ntd,nte->de", X, d)
        if config.attention_bias:
            grads[f"attn.b{name}"] = d.sum(axis=(0, 1))
        dX += d @ params[f"attn.w{name}"].T
    return grads, dX
