"""Stacked bidirectional GRU with backpropagation through time.

One step, on the concatenation ``[h, a]``::

    z  = sigmoid([h, a] @ Wz + bz)
    r  = sigmoid([h, a] @ Wr + br)
    h~ = tanh([r * h, a] @ Wh + bh)
    h' = (1 - z) * h + z * h~

Each layer feeds the next the per-step concatenation of its forward and
backward outputs. The sequence feature is the top layer's final forward state
joined with its final backward state (the backward pass ends at t = 0).
"""

from __future__ import annotations

import numpy as np

from .config import TagrnConfig
from .params import DIRECTIONS


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _affine(x, w, b):
    # x (..., K), w (..., K, H) -> (..., H); tolerates a leading axis on w
    return (x[..., None, :] @ w)[..., 0, :] + b


def _run_direction(seq: np.ndarray, params, prefix: str, hidden: int, keep: bool):
    wz, wr, wh = params[prefix + "wz"], params[prefix + "wr"], params[prefix + "wh"]
    bz, br, bh = params[prefix + "bz"], params[prefix + "br"], params[prefix + "bh"]
    T = seq.shape[-2]
    lead = np.broadcast_shapes(seq.shape[:-2], *(w.shape[:-2] for w in (wz, wr, wh)),
                               *(b.shape[:-1] for b in (bz, br, bh)))
    h = np.zeros(lead + (hidden,))
    outs, steps = [], []
    for t in range(T):
        a = np.broadcast_to(seq[..., t, :], lead + seq.shape[-1:])
        hx = np.concatenate([h, a], axis=-1)
        z = sigmoid(_affine(hx, wz, bz))
        r = sigmoid(_affine(hx, wr, br))
        hrx = np.concatenate([r * h, a], axis=-1)
        hc = np.tanh(_affine(hrx, wh, bh))
        h_new = (1.0 - z) * h + z * hc
        if keep:
            steps.append((h, hx, z, r, hrx, hc))
        h = h_new
        outs.append(h)
    return np.stack(outs, axis=-2), steps


def gru_forward(A: np.ndarray, params, config: TagrnConfig, return_cache: bool = False):
    """Return ``F`` of size ``2 * gru_hidden`` (per leading index)."""
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite GRU input")
    H = config.gru_hidden
    inp, cache = A, []
    for layer in range(config.gru_layers):
        outs, layer_cache = [], {}
        for direction in DIRECTIONS:
            seq = inp if direction == "fwd" else inp[..., ::-1, :]
            out, steps = _run_direction(seq, params, f"gru.{layer}.{direction}.", H, return_cache)
            outs.append(out if direction == "fwd" else out[..., ::-1, :])
            layer_cache[direction] = steps
        if return_cache:
            cache.append((inp.shape, layer_cache))
        inp = np.concatenate(np.broadcast_arrays(*outs), axis=-1)
    F = np.concatenate([inp[..., -1, :H], inp[..., 0, H:]], axis=-1)
    if return_cache:
        return F, {"layers": cache, "T": A.shape[-2]}
    return F


def _bptt(d_out: np.ndarray, steps, params, prefix: str, grads: dict, hidden: int):
    """Backprop one direction; ``d_out`` is (N, T, H) in processing order."""
    wz, wr, wh = params[prefix + "wz"], params[prefix + "wr"], params[prefix + "wh"]
    gwz, gwr, gwh = (np.zeros_like(w) for w in (wz, wr, wh))
    gbz, gbr, gbh = (np.zeros(hidden) for _ in range(3))
    N, T, _ = d_out.shape
    d_in = np.zeros((N, T, wz.shape[0] - hidden))
    dh_next = np.zeros((N, hidden))
    for t in range(T - 1, -1, -1):
        h, hx, z, r, hrx, hc = steps[t]
        dh = d_out[:, t] + dh_next
        dz = dh * (hc - h)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)
        dhc_pre = dhc * (1.0 - hc * hc)
        gwh += hrx.T @ dhc_pre
        gbh += dhc_pre.sum(axis=0)
        dhrx = dhc_pre @ wh.T
        d_rh = dhrx[:, :hidden]
        da = dhrx[:, hidden:].copy()
        dh_prev += d_rh * r
        dr_pre = d_rh * h * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        gwr += hx.T @ dr_pre
        gwz += hx.T @ dz_pre
        gbr += dr_pre.sum(axis=0)
        gbz += dz_pre.sum(axis=0)
        dhx = dr_pre @ wr.T + dz_pre @ wz.T
        dh_prev += dhx[:, :hidden]
        da += dhx[:, hidden:]
        d_in[:, t] = da
        dh_next = dh_prev
    for name, g in (("wz", gwz), ("wr", gwr), ("wh", gwh), ("bz", gbz), ("br", gbr), ("bh", gbh)):
        grads[prefix + name] = g
    return d_in


def gru_backward(dF: np.ndarray, cache, params, config: TagrnConfig):
    """Gradients of all GRU parameters and dL/dA from dL/dF (N, 2H)."""
    H, T = config.gru_hidden, cache["T"]
    N = dF.shape[0]
    d_out = np.zeros((N, T, 2 * H))
    d_out[:, -1, :H] = dF[:, :H]
    d_out[:, 0, H:] = dF[:, H:]
    grads: dict[str, np.ndarray] = {}
    for layer in range(config.gru_layers - 1, -1, -1):
        in_shape, layer_cache = cache["layers"][layer]
        d_inp = np.zeros((N, T, in_shape[-1]))
        for k, direction in enumerate(DIRECTIONS):
            d = d_out[..., k * H:(k + 1) * H]
            if direction == "bwd":
                d = d[:, ::-1]
            d_seq = _bptt(np.ascontiguousarray(d), layer_cache[direction], params,
                          f"gru.{layer}.{direction}.", grads, H)
            d_inp += d_seq if direction == "fwd" else d_seq[:, ::-1]
        d_out = d_inp
    return grads, d_out
