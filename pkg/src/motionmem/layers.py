"""Differentiable layer primitives and the named parameter store.

Every layer comes as a forward returning ``(output, cache)`` and a backward
taking the upstream gradient plus that cache. Backward passes are written by
hand (there is no autodiff graph here); the gradient-check harness in
``numerics`` verifies each one against central differences.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError

LN_EPS = 1e-5
GN_EPS = 1e-5


class ParamStore:
    """Named float64 tensors plus the stage-2 trainability flag per name."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}
        self._stage2: set[str] = set()

    def add(self, name: str, value: np.ndarray, stage2: bool = False) -> None:
        if name in self._store:
            raise InvalidArgumentError(f"duplicate parameter name {name!r}")
        self._store[name] = np.array(value, dtype=np.float64)
        if stage2:
            self._stage2.add(name)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._store[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._store:
            raise InvalidArgumentError(f"unknown parameter name {name!r}")
        self._store[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def names(self) -> list[str]:
        return sorted(self._store)

    def stage2_names(self) -> list[str]:
        return sorted(self._stage2)

    def stage1_names(self) -> list[str]:
        return sorted(set(self._store) - self._stage2)

    def mark_stage2(self, name: str) -> None:
        self._stage2.add(name)

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name in self.names():
            dup.add(name, self._store[name].copy(), stage2=name in self._stage2)
        return dup


def accumulate(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


# -- affine ------------------------------------------------------------------

def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(g, cache_x, w):
    x = cache_x
    lead = x.reshape(-1, x.shape[-1])
    glead = g.reshape(-1, g.shape[-1])
    gw = lead.T @ glead
    gb = glead.sum(axis=0)
    gx = g @ w.T
    return gx, gw, gb


# -- embedding ---------------------------------------------------------------

def embedding_forward(ids, table):
    return table[ids], ids


def embedding_backward(g, ids, table_shape):
    gt = np.zeros(table_shape)
    np.add.at(gt, ids, g)
    return gt


# -- relu --------------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(g, mask):
    return g * mask


# -- layer norm (last axis) --------------------------------------------------

def layernorm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv)


def layernorm_backward(g, cache, gain):
    xhat, inv = cache
    gxhat = g * gain
    mean_g = gxhat.mean(axis=-1, keepdims=True)
    mean_gx = (gxhat * xhat).mean(axis=-1, keepdims=True)
    gx = inv * (gxhat - mean_g - xhat * mean_gx)
    ggain = (g * xhat).reshape(-1, g.shape[-1]).sum(axis=0)
    gbias = g.reshape(-1, g.shape[-1]).sum(axis=0)
    return gx, ggain, gbias


# -- 1-d convolution over time, channels-first, edge padding ------------------

def conv1d_forward(x, w, b, stride: int = 1):
    """x: (C_in, T); w: (C_out, C_in, k); returns y (C_out, T_out).

    Edge-replicate padding of (k-1)//2 keeps a time-constant input
    time-constant, which the style encoder's pooling contract relies on.
    """
    c_in, t = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise InvalidArgumentError(f"conv input channels {c_in} != kernel {c_in_w}")
    pad = (k - 1) // 2
    xp = np.concatenate([np.repeat(x[:, :1], pad, axis=1), x,
                         np.repeat(x[:, -1:], pad, axis=1)], axis=1)
    t_out = (t + 2 * pad - k) // stride + 1
    starts = np.arange(t_out) * stride
    idx = starts[:, None] + np.arange(k)[None, :]  # (T_out, k)
    cols = xp[:, idx]                              # (C_in, T_out, k)
    cols = cols.transpose(1, 0, 2).reshape(t_out, c_in * k)
    y = cols @ w.reshape(c_out, c_in * k).T + b
    return y.T, (cols, idx, x.shape, pad, stride)


def conv1d_backward(g, cache, w):
    cols, idx, x_shape, pad, stride = cache
    c_in, t = x_shape
    c_out, _, k = w.shape
    gt = g.T  # (T_out, C_out)
    gw = (gt.T @ cols).reshape(c_out, c_in, k)
    gb = gt.sum(axis=0)
    gcols = (gt @ w.reshape(c_out, c_in * k)).reshape(-1, c_in, k)
    gxp = np.zeros((c_in, t + 2 * pad))
    for kk in range(k):
        # starts are unique for fixed kk, so fancy-index += is safe
        gxp[:, idx[:, kk]] += gcols[:, :, kk].T
    gx = gxp[:, pad:pad + t].copy()
    if pad > 0:
        gx[:, 0] += gxp[:, :pad].sum(axis=1)
        gx[:, -1] += gxp[:, pad + t:].sum(axis=1)
    return gx, gw, gb


# -- group norm over (channels-in-group x time) --------------------------------

def groupnorm_forward(x, gain, bias, groups: int):
    c, t = x.shape
    if c % groups != 0:
        raise InvalidArgumentError(f"{c} channels not divisible by {groups} groups")
    xg = x.reshape(groups, c // groups, t)
    mu = xg.mean(axis=(1, 2), keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + GN_EPS)
    xhat = (xc * inv).reshape(c, t)
    return gain[:, None] * xhat + bias[:, None], (xhat, inv, groups)


def groupnorm_backward(g, cache, gain):
    xhat, inv, groups = cache
    c, t = xhat.shape
    gxhat = (g * gain[:, None]).reshape(groups, c // groups, t)
    xh = xhat.reshape(groups, c // groups, t)
    mean_g = gxhat.mean(axis=(1, 2), keepdims=True)
    mean_gx = (gxhat * xh).mean(axis=(1, 2), keepdims=True)
    gx = (inv * (gxhat - mean_g - xh * mean_gx)).reshape(c, t)
    ggain = (g * xhat).sum(axis=1)
    gbias = g.sum(axis=1)
    return gx, ggain, gbias


# -- initializers -------------------------------------------------------------

def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


def init_conv(rng: np.random.Generator, c_in: int, c_out: int, k: int):
    bound = 1.0 / np.sqrt(c_in * k)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k))
    b = np.zeros(c_out)
    return w, b
