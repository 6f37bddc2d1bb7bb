"""GRU cell, bidirectional GRU encoder and feed-forward stacks.

Parameters live in a flat :class:`ParamStore`; each layer reads the entries
under its own name prefix, e.g. ``text.encoder.gru_fwd.W_z``.

Convention is row vectors: ``z = sigmoid(x @ W_z + h @ U_z + b_z)``.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError
from .tensor import ParamStore, Tensor

GATES = ("z", "r", "h")


def gru_shapes(prefix: str, d_in: int, d_h: int) -> dict[str, tuple]:
    shapes = {}
    for g in GATES:
        shapes[f"{prefix}.W_{g}"] = (d_in, d_h)
        shapes[f"{prefix}.U_{g}"] = (d_h, d_h)
        shapes[f"{prefix}.b_{g}"] = (d_h,)
    return shapes


def bigru_shapes(prefix: str, d_in: int, d_h: int) -> dict[str, tuple]:
    return {**gru_shapes(f"{prefix}.gru_fwd", d_in, d_h),
            **gru_shapes(f"{prefix}.gru_bwd", d_in, d_h)}


def ffn_shapes(prefix: str, dims: Sequence[int]) -> dict[str, tuple]:
    shapes = {}
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        shapes[f"{prefix}.layer{k}.W"] = (a, b)
        shapes[f"{prefix}.layer{k}.b"] = (b,)
    return shapes


def init_params(seed: int, shapes: Mapping[str, tuple]) -> ParamStore:
    """Xavier-uniform matrices and zero vectors, drawn in name order."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name in sorted(shapes):
        shape = tuple(shapes[name])
        if len(shape) == 2:
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            store.add(name, rng.uniform(-bound, bound, size=shape))
        else:
            store.add(name, np.zeros(shape))
    return store


def _gru(params: Mapping[str, Tensor], prefix: str) -> list[Tensor]:
    return [params[f"{prefix}.{kind}_{g}"] for g in GATES for kind in ("W", "U", "b")]


def gru_step(params: Mapping[str, Tensor], prefix: str, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU update built from primitive ops (the reference for the fused path)."""
    W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h = _gru(params, prefix)
    if x_t.shape != (W_z.shape[0],) or h_prev.shape != (U_z.shape[0],):
        raise DimensionError(
            f"gru_step {prefix}: input {x_t.shape} / state {h_prev.shape} "
            f"do not fit W {W_z.shape}, U {U_z.shape}")
    z = T.sigmoid(T.add(T.affine(x_t, W_z, b_z), T.matmul(h_prev, U_z)))
    r = T.sigmoid(T.add(T.affine(x_t, W_r, b_r), T.matmul(h_prev, U_r)))
    cand = T.tanh(T.add(T.affine(x_t, W_h, b_h), T.matmul(T.mul(r, h_prev), U_h)))
    # (1 - z) * h + z * cand, written as h + z * (cand - h)
    return T.add(h_prev, T.mul(z, T.sub(cand, h_prev)))


def _scan(X: np.ndarray, lanes: list[list[np.ndarray]]):
    """GRU recurrences over ``X`` (lanes x n x d_in), one weight set per lane.

    Returns the states (lanes x n x d_h) and a function mapping their
    gradient to (dX, per-lane weight gradients in ``_gru`` order).
    """
    L, n, _ = X.shape
    W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h = (np.stack(w) for w in zip(*lanes))
    d_h = U_z.shape[1]
    W_zr = np.concatenate([W_z, W_r], axis=2)
    U_zr = np.concatenate([U_z, U_r], axis=2)
    XZR = X @ W_zr + np.concatenate([b_z, b_r], axis=1)[:, None, :]
    XH = X @ W_h + b_h[:, None, :]

    H = np.empty((L, n, d_h))
    Hprev = np.empty((L, n, d_h))
    Z = np.empty((L, n, d_h))
    R = np.empty((L, n, d_h))
    C = np.empty((L, n, d_h))
    h = np.zeros((L, 1, d_h))
    for t in range(n):
        Hprev[:, t] = h[:, 0]
        zr = 0.5 * (1.0 + np.tanh(0.5 * (XZR[:, t:t + 1] + h @ U_zr)))
        z = zr[..., :d_h]
        r = zr[..., d_h:]
        c = np.tanh(XH[:, t:t + 1] + (r * h) @ U_h)
        h = h + z * (c - h)
        Z[:, t], R[:, t], C[:, t], H[:, t] = z[:, 0], r[:, 0], c[:, 0], h[:, 0]

    def grad_fn(G):
        DZR = np.empty((L, n, 2 * d_h))
        DC = np.empty((L, n, d_h))
        dh_next = np.zeros((L, d_h))
        U_zr_T = U_zr.transpose(0, 2, 1)
        U_h_T = U_h.transpose(0, 2, 1)
        for t in range(n - 1, -1, -1):
            dh = G[:, t] + dh_next
            hp, z, r, c = Hprev[:, t], Z[:, t], R[:, t], C[:, t]
            dac = dh * z * (1.0 - c * c)
            d_rh = (dac[:, None, :] @ U_h_T)[:, 0]
            DC[:, t] = dac
            DZR[:, t, :d_h] = dh * (c - hp) * z * (1.0 - z)
            DZR[:, t, d_h:] = d_rh * hp * r * (1.0 - r)
            dh_next = dh * (1.0 - z) + d_rh * r + (DZR[:, t:t + 1] @ U_zr_T)[:, 0]
        XT = X.transpose(0, 2, 1)
        dU_zr = Hprev.transpose(0, 2, 1) @ DZR
        dW_zr = XT @ DZR
        db_zr = DZR.sum(axis=1)
        dU_h = (R * Hprev).transpose(0, 2, 1) @ DC
        dW_h = XT @ DC
        db_h = DC.sum(axis=1)
        dX = DZR @ W_zr.transpose(0, 2, 1) + DC @ W_h.transpose(0, 2, 1)
        per_lane = [(dW_zr[k, :, :d_h], dU_zr[k, :, :d_h], db_zr[k, :d_h],
                     dW_zr[k, :, d_h:], dU_zr[k, :, d_h:], db_zr[k, d_h:],
                     dW_h[k], dU_h[k], db_h[k]) for k in range(L)]
        return dX, per_lane

    return H, grad_fn


def _check_seq(prefix: str, xs: Tensor, W: Tensor) -> None:
    if xs.data.ndim != 2 or xs.shape[1] != W.shape[0]:
        raise DimensionError(f"gru {prefix}: input {xs.shape} does not fit W {W.shape}")
    if xs.shape[0] == 0:
        raise DomainError("GRU over an empty sequence")


def gru_sequence(params: Mapping[str, Tensor], prefix: str, xs: Tensor,
                 reverse: bool = False) -> Tensor:
    """Run a GRU over the rows of ``xs`` from a zero state; returns all states.

    Fused into a single graph node with hand-written backpropagation through
    time. Row ``t`` of the result is the state after consuming row ``t``
    (for ``reverse=True``, after consuming rows ``T-1 .. t``).
    """
    weights = _gru(params, prefix)
    _check_seq(prefix, xs, weights[0])
    X = xs.data[::-1] if reverse else xs.data
    H, scan_grad = _scan(X[None], [[w.data for w in weights]])
    out = H[0, ::-1].copy() if reverse else H[0]

    def grad_fn(G):
        dX, (dw,) = scan_grad((G[::-1] if reverse else G)[None])
        return ((dX[0, ::-1] if reverse else dX[0]), *dw)

    return T.record(out, (xs, *weights), grad_fn)


def bigru_encode(params: Mapping[str, Tensor], prefix: str, seq: Tensor) -> Tensor:
    """Bidirectional GRU over the rows of ``seq`` (one row per position).

    Returns a ``len(seq) x 2*d_h`` matrix whose row ``j`` is
    ``[forward state at j ; backward state at j]``. Both directions share one
    fused time loop.
    """
    fwd = _gru(params, f"{prefix}.gru_fwd")
    bwd = _gru(params, f"{prefix}.gru_bwd")
    if seq.data.ndim != 2 or seq.shape[0] == 0:
        raise DomainError(f"bigru_encode needs a nonempty sequence matrix, got {seq.shape}")
    _check_seq(prefix, seq, fwd[0])
    X = np.stack([seq.data, seq.data[::-1]])
    H, scan_grad = _scan(X, [[w.data for w in fwd], [w.data for w in bwd]])
    out = np.concatenate([H[0], H[1, ::-1]], axis=1)
    d_h = H.shape[2]

    def grad_fn(G):
        dX, (dw_f, dw_b) = scan_grad(np.stack([G[:, :d_h], G[::-1, d_h:]]))
        return (dX[0] + dX[1, ::-1], *dw_f, *dw_b)

    return T.record(out, (seq, *fwd, *bwd), grad_fn)


_ACTIVATIONS = {"relu": T.relu, "identity": lambda x: x}


def ffn_apply(params: Mapping[str, Tensor], prefix: str, x: Tensor,
              activations: Sequence[str]) -> Tensor:
    """Affine layers ``prefix.layer{k}`` each followed by ``activations[k]``."""
    for k, act in enumerate(activations):
        W = params[f"{prefix}.layer{k}.W"]
        if x.shape[-1] != W.shape[0]:
            raise DimensionError(f"{prefix}.layer{k}: input width {x.shape[-1]} != {W.shape[0]}")
        x = _ACTIVATIONS[act](T.affine(x, W, params[f"{prefix}.layer{k}.b"]))
    return x
