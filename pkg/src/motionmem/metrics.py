"""Vertex/lip evaluation metrics and dynamic time warping.

Normalization conventions (the source material leaves them open): vertex
errors are means per frame and per vertex, and LDTW divides the accumulated
warping cost by the optimal path length. Absolute values are therefore only
comparable within this implementation; orderings between models are the
meaningful quantity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError


def _check_shapes(ref: np.ndarray, hyp: np.ndarray):
    if ref.shape != hyp.shape:
        raise InvalidArgumentError(f"shape mismatch {ref.shape} vs {hyp.shape}")


def fve(ref: np.ndarray, hyp: np.ndarray) -> float:
    """Mean over frames and all vertices of the L2 vertex position error."""
    _check_shapes(ref, hyp)
    return float(np.mean(np.linalg.norm(ref - hyp, axis=2)))


def lve(ref: np.ndarray, hyp: np.ndarray, lip_mask) -> float:
    """fve restricted to the lower-face vertex set."""
    _check_shapes(ref, hyp)
    lip_mask = np.asarray(lip_mask)
    if lip_mask.size == 0:
        raise InvalidArgumentError("lip mask is empty")
    return float(np.mean(np.linalg.norm(ref[:, lip_mask] - hyp[:, lip_mask], axis=2)))


def lip_max(ref: np.ndarray, hyp: np.ndarray, lip_mask) -> float:
    """Highest lip-vertex error per frame, averaged over frames."""
    _check_shapes(ref, hyp)
    lip_mask = np.asarray(lip_mask)
    if lip_mask.size == 0:
        raise InvalidArgumentError("lip mask is empty")
    per_vertex = np.linalg.norm(ref[:, lip_mask] - hyp[:, lip_mask], axis=2)
    return float(np.mean(np.max(per_vertex, axis=1)))


def _dtw_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    t1, t2 = a.shape[0], b.shape[0]
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))
    acc = np.full((t1, t2), np.inf)
    acc[0, 0] = cost[0, 0]
    for j in range(1, t2):
        acc[0, j] = cost[0, j] + acc[0, j - 1]
    for i in range(1, t1):
        acc[i, 0] = cost[i, 0] + acc[i - 1, 0]
        for j in range(1, t2):
            acc[i, j] = cost[i, j] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
    return acc


def dtw_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Classic DTW with L2 local cost and steps {(1,0),(0,1),(1,1)}."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise InvalidArgumentError("dtw needs non-empty sequences")
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    return float(_dtw_table(a, b)[-1, -1])


def dtw_cost_and_length(a: np.ndarray, b: np.ndarray) -> tuple[float, int]:
    """Accumulated cost plus the node count of the optimal path.

    Ties during backtracking prefer the diagonal step, which picks the
    shortest among equal-cost paths deterministically.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    acc = _dtw_table(a, b)
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    length = 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            candidates = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            best = min(candidates)
            if candidates[0] == best:
                i, j = i - 1, j - 1
            elif candidates[1] == best:
                i -= 1
            else:
                j -= 1
        length += 1
    return float(acc[-1, -1]), length


def ldtw(ref: np.ndarray, hyp: np.ndarray, lip_mask) -> float:
    """Path-length-normalized DTW over flattened lip-vertex trajectories."""
    _check_shapes(ref, hyp)
    lip_mask = np.asarray(lip_mask)
    if lip_mask.size == 0:
        raise InvalidArgumentError("lip mask is empty")
    t = ref.shape[0]
    a = ref[:, lip_mask].reshape(t, -1)
    b = hyp[:, lip_mask].reshape(t, -1)
    cost, length = dtw_cost_and_length(a, b)
    return cost / length


@dataclass
class MetricReport:
    fve: float = 0.0
    lve: float = 0.0
    ldtw: float = 0.0
    lip_max: float = 0.0
    per_clip: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "fve": self.fve, "lve": self.lve, "ldtw": self.ldtw,
                "lip_max": self.lip_max, "per_clip": self.per_clip,
            },
            sort_keys=True, indent=1,
        )

    def to_csv(self) -> str:
        lines = ["clip_id,fve,lve,ldtw,lip_max"]
        for row in self.per_clip:
            lines.append(
                f"{row['clip_id']},{row['fve']!r},{row['lve']!r},"
                f"{row['ldtw']!r},{row['lip_max']!r}"
            )
        lines.append(
            f"MEAN,{self.fve!r},{self.lve!r},{self.ldtw!r},{self.lip_max!r}"
        )
        return "\n".join(lines) + "\n"


def evaluate_clips(pairs: list[tuple[str, np.ndarray, np.ndarray]], lip_mask) -> MetricReport:
    """Per-clip metrics over (clip_id, ref, hyp) triples; aggregates are means."""
    if not pairs:
        raise InvalidArgumentError("no clips to evaluate")
    report = MetricReport()
    for clip_id, ref, hyp in pairs:
        row = {
            "clip_id": clip_id,
            "fve": fve(ref, hyp),
            "lve": lve(ref, hyp, lip_mask),
            "ldtw": ldtw(ref, hyp, lip_mask),
            "lip_max": lip_max(ref, hyp, lip_mask),
        }
        report.per_clip.append(row)
    for name in ("fve", "lve", "ldtw", "lip_max"):
        setattr(report, name, float(np.mean([row[name] for row in report.per_clip])))
    return report


def read_lip_mask(path) -> np.ndarray:
    """Whitespace/newline-separated vertex indices."""
    text = Path(path).read_text().split()
    if not text:
        raise InvalidArgumentError(f"{path}: empty lip mask file")
    return np.array([int(v) for v in text], dtype=np.int64)
