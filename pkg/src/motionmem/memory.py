"""Key-value motion memory: addressing, recall, and audio-driven stylization.

Value addresses come from motion features via scaled cosine similarity
against every slot; key addresses are a plain softmax of the projected text
representation (no cosine, no scaling). Both recall by the same weighted sum
over slots. Stylization rescales each slot by an audio-derived weight and is
pure: the original bank is never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import InvalidArgumentError
from .numerics import softmax_rows, softmax_rows_backward

DEFAULT_KAPPA = 16.0


@dataclass
class MemoryBank:
    """Slot matrix (n, c) with the addressing temperature ``kappa``."""

    slots: np.ndarray
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.float64)
        if self.slots.ndim != 2 or self.slots.shape[0] < 2:
            raise InvalidArgumentError("memory needs an (n >= 2, c) slot matrix")

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]

    @property
    def channels(self) -> int:
        return self.slots.shape[1]


def init_slots(rng: np.random.Generator, n_slots: int, channels: int,
               gain: float = 1.0) -> np.ndarray:
    """i.i.d. uniform(-gain/sqrt(c), gain/sqrt(c)); rejects the (measure-zero)
    all-zero slot draw so cosine geometry is never degenerate.

    ``gain`` sets the reachable recall magnitude: recalled features are
    convex combinations of slots, so slots must start at the scale of the
    motion features they will store.
    """
    bound = gain / np.sqrt(channels)
    slots = rng.uniform(-bound, bound, size=(n_slots, channels))
    while np.any(np.all(slots == 0.0, axis=1)):  # pragma: no cover
        slots = rng.uniform(-bound, bound, size=(n_slots, channels))
    return slots


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe, norms


def value_address_forward(features: np.ndarray, bank: MemoryBank):
    """(T, c) motion features -> (T, n) value addresses, with cache.

    Zero-norm query rows have cosine 0 against every slot and therefore get
    a uniform address (the degenerate-query policy).
    """
    u, fnorms = _normalize_rows(features)
    wn, snorms = _normalize_rows(bank.slots)
    cos = u @ wn.T
    addr = softmax_rows(bank.kappa * cos)
    return addr, (u, wn, fnorms, snorms, addr, bank.kappa)


def value_address_backward(g_addr, cache):
    u, wn, fnorms, snorms, addr, kappa = cache
    g_cos = kappa * softmax_rows_backward(addr, g_addr)
    gu = g_cos @ wn
    gwn = g_cos.T @ u
    # back through row normalization; zero-norm rows take zero subgradient
    gf = (gu - np.sum(gu * u, axis=1, keepdims=True) * u)
    gf = np.where(fnorms > 0.0, gf / np.where(fnorms > 0.0, fnorms, 1.0), 0.0)
    gs = (gwn - np.sum(gwn * wn, axis=1, keepdims=True) * wn) / snorms
    return gf, gs


def address_by_value(f_m: np.ndarray, bank: MemoryBank) -> np.ndarray:
    """Single-query form of value addressing (Vec[c] -> Vec[n])."""
    f_m = np.asarray(f_m, dtype=np.float64)
    addr, _ = value_address_forward(f_m[None, :], bank)
    return addr[0]


def address_by_key(f_txt: np.ndarray) -> np.ndarray:
    """Softmax of the projected text representation (Vec[n] -> Vec[n])."""
    f_txt = np.asarray(f_txt, dtype=np.float64)
    if f_txt.ndim == 1:
        return softmax_rows(f_txt[None, :])[0]
    return softmax_rows(f_txt)


def recall(addr: np.ndarray, bank: MemoryBank) -> np.ndarray:
    """Weighted sum of slots; works for one address (n,) or a stack (T, n)."""
    addr = np.asarray(addr, dtype=np.float64)
    if addr.shape[-1] != bank.n_slots:
        raise InvalidArgumentError(
            f"address width {addr.shape[-1]} != {bank.n_slots} slots"
        )
    return addr @ bank.slots


# recall_value and recall_key share one contract; distinct names keep call
# sites honest about which address source produced the weights.
recall_value = recall
recall_key = recall


def recall_backward(g_out, addr, slots):
    g_addr = g_out @ slots.T
    g_slots = addr.T @ g_out if addr.ndim == 2 else np.outer(addr, g_out)
    return g_addr, g_slots


def style_weights(f_s: np.ndarray, params, prefix: str = "style_head"):
    """Per-slot style weights: sigmoid(gate(f_s)) scaled by scale(f_s).

    Returns (weights, cache); weights may be negative or exceed 1.
    """
    f_s = np.asarray(f_s, dtype=np.float64)
    gate = f_s @ params[f"{prefix}.gate.w"] + params[f"{prefix}.gate.b"]
    sig = 1.0 / (1.0 + np.exp(-gate))
    scale = float(f_s @ params[f"{prefix}.scale.w"] + params[f"{prefix}.scale.b"][0])
    return sig * scale, (f_s, sig, scale)


def style_weights_backward(g_w, cache, params, grads, prefix: str = "style_head"):
    f_s, sig, scale = cache
    g_sig = g_w * scale
    g_scale = float(np.sum(g_w * sig))
    g_gate = g_sig * sig * (1.0 - sig)
    layers.accumulate(grads, f"{prefix}.gate.w", np.outer(f_s, g_gate))
    layers.accumulate(grads, f"{prefix}.gate.b", g_gate)
    layers.accumulate(grads, f"{prefix}.scale.w", f_s * g_scale)
    layers.accumulate(grads, f"{prefix}.scale.b", np.array([g_scale]))
    g_fs = params[f"{prefix}.gate.w"] @ g_gate + params[f"{prefix}.scale.w"] * g_scale
    return g_fs


def stylize(bank: MemoryBank, weights: np.ndarray) -> MemoryBank:
    """Scale slot i by weights[i]; returns a new bank, input left untouched."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (bank.n_slots,):
        raise InvalidArgumentError(
            f"need {bank.n_slots} style weights, got shape {weights.shape}"
        )
    return MemoryBank(slots=weights[:, None] * bank.slots, kappa=bank.kappa)
