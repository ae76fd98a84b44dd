"""Training objectives for both stages, with analytic gradients.

Reduction conventions: the reconstruction, velocity, and memory terms sum
over frames (and average over the batch at the call site); the lip term is a
mean over frames and masked vertices, since it only balances the lip region
against the full-face term.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import KL_EPS


@dataclass
class LossBreakdown:
    mse: float = 0.0
    vel: float = 0.0
    mem: float = 0.0
    align: float = 0.0
    lip: float = 0.0
    style: float = 0.0
    total: float = 0.0

    def as_row(self) -> dict[str, float]:
        return {
            "mse": self.mse, "vel": self.vel, "mem": self.mem, "align": self.align,
            "lip": self.lip, "style": self.style, "total": self.total,
        }


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")


def loss_mse(v: np.ndarray, v_hat: np.ndarray) -> float:
    """Sum over frames of squared L2 error over all vertex components."""
    _check_same_shape(v, v_hat)
    return float(np.sum((v - v_hat) ** 2))


def loss_mse_grad(v: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    return 2.0 * (v_hat - v)


def loss_vel(v: np.ndarray, v_hat: np.ndarray) -> float:
    """Sum over frame pairs of squared L2 error of frame-to-frame deltas."""
    _check_same_shape(v, v_hat)
    if v.shape[0] < 2:
        warnings.warn("velocity loss undefined for T < 2; returning 0")
        return 0.0
    dv = np.diff(v, axis=0)
    dh = np.diff(v_hat, axis=0)
    return float(np.sum((dv - dh) ** 2))


def loss_vel_grad(v: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    g = np.zeros_like(v_hat)
    if v.shape[0] < 2:
        return g
    err = np.diff(v_hat, axis=0) - np.diff(v, axis=0)
    g[:-1] -= 2.0 * err
    g[1:] += 2.0 * err
    return g


def loss_mem(f_m: np.ndarray, recalled: np.ndarray) -> float:
    """Sum over frames of squared L2 error between features and value recall."""
    _check_same_shape(f_m, recalled)
    return float(np.sum((f_m - recalled) ** 2))


def loss_align(key_addr: np.ndarray, val_addr: np.ndarray) -> float:
    """Sum over frames of KL(key || value), value side clamped at KL_EPS."""
    _check_same_shape(key_addr, val_addr)
    qc = np.maximum(val_addr, KL_EPS)
    mask = key_addr > 0
    return float(np.sum(key_addr[mask] * np.log(key_addr[mask] / qc[mask])))


def loss_align_grads(key_addr: np.ndarray, val_addr: np.ndarray):
    """Gradients wrt both address pathways (no stop-gradient on either)."""
    qc = np.maximum(val_addr, KL_EPS)
    g_key = np.log(key_addr / qc) + 1.0
    g_val = np.where(val_addr > KL_EPS, -key_addr / qc, 0.0)
    return g_key, g_val


def loss_lip(v: np.ndarray, v_hat: np.ndarray, lip_mask: np.ndarray) -> float:
    """Mean over frames and lower-face vertices of squared L2 error."""
    _check_same_shape(v, v_hat)
    lip_mask = np.asarray(lip_mask)
    if lip_mask.size == 0:
        raise InvalidArgumentError("lip mask is empty")
    diff = v[:, lip_mask] - v_hat[:, lip_mask]
    return float(np.mean(np.sum(diff**2, axis=2)))


def loss_lip_grad(v: np.ndarray, v_hat: np.ndarray, lip_mask: np.ndarray) -> np.ndarray:
    lip_mask = np.asarray(lip_mask)
    g = np.zeros_like(v_hat)
    scale = 2.0 / (v.shape[0] * lip_mask.size)
    g[:, lip_mask] = scale * (v_hat[:, lip_mask] - v[:, lip_mask])
    return g


def loss_style(f_s, f_s_pos, f_s_neg, margin: float = 0.2) -> float:
    """Triplet loss pulling same-speaker styles together."""
    f_s, f_s_pos, f_s_neg = (np.asarray(x, dtype=np.float64) for x in (f_s, f_s_pos, f_s_neg))
    d_pos = float(np.sum((f_s - f_s_pos) ** 2))
    d_neg = float(np.sum((f_s - f_s_neg) ** 2))
    return max(d_pos - d_neg + margin, 0.0)


def loss_style_grads(f_s, f_s_pos, f_s_neg, margin: float = 0.2):
    """Returns (loss, g_anchor, g_pos, g_neg); all zero when the hinge is off."""
    value = loss_style(f_s, f_s_pos, f_s_neg, margin)
    if value <= 0.0:
        z = np.zeros_like(f_s)
        return value, z, z.copy(), z.copy()
    g_anchor = 2.0 * (f_s - f_s_pos) - 2.0 * (f_s - f_s_neg)
    g_pos = -2.0 * (f_s - f_s_pos)
    g_neg = 2.0 * (f_s - f_s_neg)
    return value, g_anchor, g_pos, g_neg


def stage1_total(parts: LossBreakdown, lambda1: float = 0.01) -> float:
    return parts.mse + parts.vel + lambda1 * (parts.mem + parts.align)


def stage2_total(parts: LossBreakdown, lambda2: float = 0.01) -> float:
    return parts.mse + parts.vel + lambda2 * (parts.lip + parts.style)
