"""Dropout + shared linear classifier + per-task softmax, and the focal loss."""

from __future__ import annotations

import numpy as np

from .attention import softmax
from .config import FocalLossConfig, TagrnConfig

LOG_CLAMP = 1e-12


def dropout_mask(shape, p: float, seed) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability p, else 1/(1-p)."""
    if p == 0:
        return np.ones(shape)
    rng = np.random.default_rng(seed)
    return (rng.random(shape) >= p) / (1.0 - p)


def classify(F: np.ndarray, params, config: TagrnConfig, mode: str = "infer",
             dropout_seed=None, mask: np.ndarray | None = None, return_cache: bool = False):
    """P of shape (..., B, R), each row a distribution over resolutions."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and config.dropout_p > 0:
        if mask is None:
            mask = dropout_mask(F.shape, config.dropout_p, dropout_seed)
        Fd = F * mask
    else:
        mask = None
        Fd = F
    logits = Fd @ params["cls.w"] + params["cls.b"]
    P = softmax(logits.reshape(logits.shape[:-1] + (config.tasks_b, config.classes_r)))
    if return_cache:
        return P, {"Fd": Fd, "mask": mask}
    return P


def _alpha(flcfg: FocalLossConfig, R: int) -> np.ndarray:
    if flcfg.alpha is None:
        return np.ones(R)
    a = np.asarray(flcfg.alpha, dtype=float)
    if a.shape != (R,):
        raise ValueError(f"alpha has {a.size} entries for {R} classes")
    return a


def focal_loss(P: np.ndarray, Y: np.ndarray, flcfg: FocalLossConfig = FocalLossConfig()):
    """Sum over tasks of ``-alpha_c (1 - p_c)^gamma ln p_c`` (c = true class).

    ``p_c`` is clamped at 1e-12 inside the log. Leading axes are kept.
    """
    Y = np.asarray(Y)
    pt = (P * Y).sum(axis=-1)
    alpha = (Y * _alpha(flcfg, P.shape[-1])).sum(axis=-1)
    per_task = -alpha * (1.0 - pt) ** flcfg.gamma * np.log(np.maximum(pt, LOG_CLAMP))
    return per_task.sum(axis=-1)


def focal_loss_grad_logits(P: np.ndarray, Y: np.ndarray,
                           flcfg: FocalLossConfig = FocalLossConfig()) -> np.ndarray:
    """d focal_loss / d logits, same shape as P."""
    Y = np.asarray(Y)
    g = flcfg.gamma
    pt = (P * Y).sum(axis=-1, keepdims=True)
    alpha = (Y * _alpha(flcfg, P.shape[-1])).sum(axis=-1, keepdims=True)
    clamped = pt < LOG_CLAMP
    log_pt = np.log(np.maximum(pt, LOG_CLAMP))
    one_minus = 1.0 - pt
    with np.errstate(divide="ignore", invalid="ignore"):
        mod_term = np.where((g == 0) | (log_pt == 0), 0.0,
                            g * one_minus ** (g - 1.0) * log_pt)
        ce_term = np.where(clamped, 0.0, one_minus ** g / np.where(clamped, 1.0, pt))
    dl_dpt = alpha * (mod_term - ce_term)
    return dl_dpt * pt * (Y - P)


def classify_backward(dlogits: np.ndarray, cache, params, config: TagrnConfig):
    """dlogits (N, B, R) -> classifier grads and dL/dF (N, 2H)."""
    dl = dlogits.reshape(dlogits.shape[0], -1)
    grads = {"cls.w": cache["Fd"].T @ dl, "cls.b": dl.sum(axis=0)}
    dF = dl @ params["cls.w"].T
    if cache["mask"] is not None:
        dF = dF * cache["mask"]
    return grads, dF


def inverse_frequency_alpha(histogram: np.ndarray) -> tuple[float, ...]:
    """Per-class weights proportional to 1/frequency, normalised to mean 1.

    Classes never chosen get the weight of the rarest observed class.
    """
    counts = np.asarray(histogram).sum(axis=0).astype(float)
    seen = counts > 0
    if not seen.any():
        return tuple(np.ones(len(counts)))
    w = np.zeros_like(counts)
    w[seen] = counts[seen].sum() / counts[seen]
    w[~seen] = w[seen].max()
    return tuple(w / w.mean())
