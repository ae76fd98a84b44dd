"""Dense tensor arithmetic, elementary nonlinearities, and gradient checking.

Tensors are plain C-order ``numpy.ndarray`` objects. Everything here is pure
and thread-safe. Gradient checks run in float64; training storage may be
float32 but all reference math in this module assumes float64.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DegenerateQueryWarning, InvalidArgumentError

KL_EPS = 1e-12


def as_tensor(data, shape=None, dtype=np.float64, checked: bool = True) -> np.ndarray:
    """Build a C-order array, optionally validating shape and finiteness.

    ``shape`` when given must match the element count of ``data``. In checked
    mode any NaN/Inf entry raises ``InvalidArgumentError``.
    """
    arr = np.ascontiguousarray(data, dtype=dtype)
    if shape is not None:
        expected = int(np.prod(shape)) if len(shape) else 1
        if arr.size != expected:
            raise InvalidArgumentError(
                f"data has {arr.size} elements, shape {tuple(shape)} needs {expected}"
            )
        arr = arr.reshape(shape)
    if checked and not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("tensor contains non-finite values")
    return arr


def softmax(x: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax of a vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("softmax expects a non-empty vector")
    z = np.exp(x - np.max(x))
    return z / np.sum(z)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a matrix (used for per-frame addressing)."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def softmax_rows_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient of row-wise softmax: p * (g - <g, p>)."""
    dot = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - dot)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function; sigmoid(0) == 0.5 exactly."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors.

    Zero-norm inputs are degenerate; the similarity is defined as 0 and a
    ``DegenerateQueryWarning`` is issued so early-training code keeps running.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero-norm vector in cosine similarity", DegenerateQueryWarning)
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Sum of p * log(p / q) with q clamped below by KL_EPS.

    The clamp applies to the denominator only; p entries equal to zero
    contribute exactly zero.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidArgumentError(f"shape mismatch {p.shape} vs {q.shape}")
    qc = np.maximum(q, KL_EPS)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / qc[mask])))


def build_interp_matrix(t_in: int, t_out: int) -> np.ndarray:
    """Row-stochastic (t_out, t_in) matrix performing linear time resampling.

    Endpoints map to endpoints; each row mixes at most two adjacent input
    rows. ``t_out == 1`` degenerates to selecting the first input row.
    """
    if t_in < 1 or t_out < 1:
        raise InvalidArgumentError("interpolation needs at least one frame")
    mat = np.zeros((t_out, t_in))
    if t_out == 1 or t_in == 1:
        mat[:, 0] = 1.0
        return mat
    scale = (t_in - 1) / (t_out - 1)
    for i in range(t_out):
        pos = i * scale
        lo = min(int(np.floor(pos)), t_in - 1)
        hi = min(lo + 1, t_in - 1)
        frac = pos - lo
        mat[i, lo] += 1.0 - frac
        if hi != lo:
            mat[i, hi] += frac
    return mat


def linear_interp_time(seq: np.ndarray, t_out: int) -> np.ndarray:
    """Resample a (T_in, d) sequence to (t_out, d) by linear interpolation."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise InvalidArgumentError("expected a non-empty (T, d) matrix")
    if t_out == seq.shape[0]:
        return seq.copy()
    return build_interp_matrix(seq.shape[0], t_out) @ seq


@dataclass
class GradCheckReport:
    """Outcome of a central-difference check of one differentiable op."""

    op_name: str
    max_rel_error: float = 0.0
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    op: Callable[[Mapping[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    name: str = "op",
) -> GradCheckReport:
    """Compare analytic gradients of ``op`` against central differences.

    ``op`` maps a name->array parameter dict to ``(loss, grads)`` where
    ``grads`` holds an array per parameter (missing entries are treated as
    zero gradients). Arithmetic is float64 throughout; every element of every
    parameter is perturbed by +-step.
    """
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    loss, grads = op(work)
    loss = np.asarray(loss)
    if loss.size != 1:
        raise InvalidArgumentError("op under test must return a scalar loss")
    report = GradCheckReport(op_name=name)
    for pname in sorted(work):
        arr = work[pname]
        analytic = np.asarray(grads.get(pname, np.zeros_like(arr)), dtype=np.float64)
        worst = 0.0
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = op(work)
            flat[i] = orig - step
            down, _ = op(work)
            flat[i] = orig
            numeric = (float(up) - float(down)) / (2.0 * step)
            worst = max(worst, _rel_error(float(aflat[i]), numeric))
        report.per_param[pname] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
