"""Full forward/backward pass: attention -> Bi-GRU -> dropout -> classifier."""

from __future__ import annotations

import numpy as np

from ..core import BitrateLadder, EncodingRecipe
from .attention import attention_backward, attention_forward
from .config import FocalLossConfig, TagrnConfig
from .gru import gru_backward, gru_forward
from .head import classify, classify_backward, focal_loss, focal_loss_grad_logits
from .params import TagrnParams


def _check_input(X: np.ndarray, config: TagrnConfig) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim not in (2, 3) or X.shape[-1] != config.feature_dim:
        raise ValueError(f"expected (..., T, {config.feature_dim}) features, got {X.shape}")
    return X


def forward(X: np.ndarray, params, config: TagrnConfig | None = None, mode: str = "infer",
            dropout_seed=None, mask: np.ndarray | None = None) -> np.ndarray:
    """P for one sequence (T, D) or a batch (N, T, D).

    ``params`` may be a :class:`TagrnParams` or a plain mapping; in the latter
    case arrays may carry a leading axis, evaluated jointly by broadcasting.
    """
    config = config or params.config
    X = _check_input(X, config)
    A = attention_forward(X, params, config)
    F = gru_forward(A, params, config)
    return classify(F, params, config, mode, dropout_seed=dropout_seed, mask=mask)


def loss_and_grads(X: np.ndarray, Y: np.ndarray, params: TagrnParams,
                   flcfg: FocalLossConfig = FocalLossConfig(), mode: str = "train",
                   dropout_seed=None, mask: np.ndarray | None = None,
                   l2: float = 0.0):
    """Mean over the batch of the task-summed focal loss, its gradients and P.

    ``l2`` adds ``l2 * ||w||^2`` over every parameter, i.e. ``2 * l2 * w`` to
    each gradient.
    """
    config = params.config
    X = _check_input(X, config)
    Y = np.asarray(Y, dtype=float)
    single = X.ndim == 2
    if single:
        X, Y = X[None], Y[None]
        if mask is not None:
            mask = np.asarray(mask)[None] if np.ndim(mask) == 1 else mask
    N = X.shape[0]
    A, acache = attention_forward(X, params, config, return_cache=True)
    F, gcache = gru_forward(A, params, config, return_cache=True)
    P, ccache = classify(F, params, config, mode, dropout_seed=dropout_seed, mask=mask,
                         return_cache=True)
    losses = focal_loss(P, Y, flcfg)
    loss = float(losses.mean())
    dlogits = focal_loss_grad_logits(P, Y, flcfg) / N
    grads, dF = classify_backward(dlogits, ccache, params, config)
    g_gru, dA = gru_backward(dF, gcache, params, config)
    g_att, _ = attention_backward(dA, acache, params, config)
    grads.update(g_gru)
    grads.update(g_att)
    if l2:
        loss += l2 * sum(float((w * w).sum()) for _, w in params.items())
        for name, w in params.items():
            grads[name] = grads[name] + 2.0 * l2 * w
    grads = {name: grads[name] for name in params}
    return loss, grads, (P[0] if single else P)


def backward(X: np.ndarray, Y: np.ndarray, params: TagrnParams, config: TagrnConfig | None = None,
             flcfg: FocalLossConfig = FocalLossConfig(), dropout_seed=None,
             weight_decay: float = 0.0, mode: str = "train") -> dict[str, np.ndarray]:
    """Analytic gradient of the loss w.r.t. every parameter (see :func:`loss_and_grads`)."""
    if config is not None and config != params.config:
        raise ValueError("config does not match params")
    _, grads, _ = loss_and_grads(X, Y, params, flcfg, mode=mode, dropout_seed=dropout_seed,
                                 l2=weight_decay)
    return grads


def argmax_prefer_low(P: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the highest column index (fewest pixels)."""
    P = np.asarray(P)
    flipped = P[..., ::-1]
    return P.shape[-1] - 1 - flipped.argmax(axis=-1)


def predict_ladder(X: np.ndarray, params: TagrnParams, recipe: EncodingRecipe,
                   sequence_id: str = "") -> BitrateLadder:
    config = params.config
    if (config.tasks_b, config.classes_r) != (recipe.num_bitrates, recipe.num_resolutions):
        raise ValueError(
            f"model predicts {config.tasks_b}x{config.classes_r}, recipe is "
            f"{recipe.num_bitrates}x{recipe.num_resolutions}"
        )
    P = forward(X, params, mode="infer")
    return ladder_from_probabilities(P, recipe, sequence_id)


def ladder_from_probabilities(P: np.ndarray, recipe: EncodingRecipe,
                              sequence_id: str = "") -> BitrateLadder:
    return BitrateLadder.from_indices(argmax_prefer_low(P).tolist(), recipe, sequence_id)
