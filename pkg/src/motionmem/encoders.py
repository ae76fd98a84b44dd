"""Input encoders: motion frames, text representations, and speaking style.

The text-representation encoder is pluggable: the synthetic path embeds
per-frame viseme ids, the import path loads precomputed per-frame features
from a TXTF file. Either source is resampled to the motion frame rate and
projected to the number of memory slots by a single affine layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import layers
from .errors import DataFormatError, InvalidArgumentError, UnsupportedFormatError
from .numerics import build_interp_matrix

TXTF_MAGIC = b"TXTF"
TXTF_VERSION = 1


# -- motion encoder: one affine map per frame ---------------------------------

def motion_encode(motion_flat: np.ndarray, params, prefix: str = "motion_enc"):
    """(T, V*3) frame rows -> (T, c) features. No temporal mixing."""
    w = params[f"{prefix}.w"]
    if motion_flat.shape[1] != w.shape[0]:
        raise InvalidArgumentError(
            f"motion frame dim {motion_flat.shape[1]} != encoder fan-in {w.shape[0]}"
        )
    out, cache = layers.linear_forward(motion_flat, w, params[f"{prefix}.b"])
    return out, cache


def motion_encode_backward(g, cache, params, grads, prefix: str = "motion_enc"):
    gx, gw, gb = layers.linear_backward(g, cache, params[f"{prefix}.w"])
    layers.accumulate(grads, f"{prefix}.w", gw)
    layers.accumulate(grads, f"{prefix}.b", gb)
    return gx


# -- text-representation encoder ----------------------------------------------

@dataclass
class TextSource:
    """Per-frame source features for the text pathway.

    Exactly one of ``viseme_ids`` (synthetic path) or ``features`` (import
    path, (T_src, d_txt)) is set.
    """

    viseme_ids: np.ndarray | None = None
    features: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        if self.viseme_ids is not None:
            return len(self.viseme_ids)
        return self.features.shape[0]


def expand_phonemes(phonemes: list[tuple[int, int]]) -> np.ndarray:
    """(viseme, duration) list -> per-frame viseme id array."""
    ids = []
    for viseme_id, duration in phonemes:
        ids.extend([viseme_id] * duration)
    if not ids:
        raise InvalidArgumentError("empty phoneme sequence")
    return np.array(ids, dtype=np.int64)


def write_txtf(path, features: np.ndarray) -> None:
    t_src, d_txt = features.shape
    header = TXTF_MAGIC + np.array([TXTF_VERSION, t_src, d_txt], dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + features.astype("<f4").tobytes())


def read_txtf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != TXTF_MAGIC:
        raise UnsupportedFormatError(f"{path}: not a TXTF file")
    version, t_src, d_txt = np.frombuffer(raw[4:16], dtype="<u4")
    if version != TXTF_VERSION:
        raise UnsupportedFormatError(f"{path}: unsupported TXTF version {version}")
    expected = 16 + 4 * t_src * d_txt
    if len(raw) != expected:
        raise DataFormatError(f"{path}: truncated TXTF ({len(raw)} bytes, need {expected})")
    return np.frombuffer(raw[16:], dtype="<f4").astype(np.float64).reshape(t_src, d_txt)


def text_encode(source: TextSource, t_out: int, params, prefix: str = "text_enc"):
    """Embed or load per-frame features, resample to t_out, project to slots."""
    if source.viseme_ids is not None:
        emb = params[f"{prefix}.emb"]
        src, ids = layers.embedding_forward(source.viseme_ids, emb)
    else:
        src = np.asarray(source.features, dtype=np.float64)
        ids = None
        d_txt = params[f"{prefix}.emb"].shape[1]
        if src.ndim != 2 or src.shape[1] != d_txt:
            raise UnsupportedFormatError(
                f"precomputed features have dim {src.shape[-1]}, expected {d_txt}"
            )
    if src.shape[0] == t_out:
        interp = None
        resampled = src
    else:
        interp = build_interp_matrix(src.shape[0], t_out)
        resampled = interp @ src
    w, b = params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"]
    f_txt, lin_cache = layers.linear_forward(resampled, w, b)
    return f_txt, (ids, interp, lin_cache, src.shape)


def text_encode_backward(g, cache, params, grads, prefix: str = "text_enc"):
    ids, interp, lin_cache, src_shape = cache
    gx, gw, gb = layers.linear_backward(g, lin_cache, params[f"{prefix}.proj.w"])
    layers.accumulate(grads, f"{prefix}.proj.w", gw)
    layers.accumulate(grads, f"{prefix}.proj.b", gb)
    gsrc = gx if interp is None else interp.T @ gx
    if ids is not None:
        gemb = layers.embedding_backward(gsrc, ids, params[f"{prefix}.emb"].shape)
        layers.accumulate(grads, f"{prefix}.emb", gemb)


# -- speaking-style encoder ----------------------------------------------------

def init_style_encoder(ps: layers.ParamStore, rng, mel_bins: int, width: int,
                       channels: int, prefix: str = "style_enc") -> None:
    w, b = layers.init_conv(rng, mel_bins, width, 3)
    ps.add(f"{prefix}.conv1.w", w, stage2=True)
    ps.add(f"{prefix}.conv1.b", b, stage2=True)
    ps.add(f"{prefix}.gn1.g", np.ones(width), stage2=True)
    ps.add(f"{prefix}.gn1.b", np.zeros(width), stage2=True)
    for block in ("conv2", "conv3"):
        w, b = layers.init_conv(rng, width, width, 3)
        ps.add(f"{prefix}.{block}.w", w, stage2=True)
        ps.add(f"{prefix}.{block}.b", b, stage2=True)
    ps.add(f"{prefix}.gn2.g", np.ones(width), stage2=True)
    ps.add(f"{prefix}.gn2.b", np.zeros(width), stage2=True)
    ps.add(f"{prefix}.gn3.g", np.ones(width), stage2=True)
    ps.add(f"{prefix}.gn3.b", np.zeros(width), stage2=True)
    w, b = layers.init_linear(rng, width, width)
    ps.add(f"{prefix}.fc1.w", w, stage2=True)
    ps.add(f"{prefix}.fc1.b", b, stage2=True)
    w, b = layers.init_linear(rng, width, channels)
    ps.add(f"{prefix}.fc2.w", w, stage2=True)
    ps.add(f"{prefix}.fc2.b", b, stage2=True)


def style_encode(mel_frames: np.ndarray, params, groups: int = 16,
                 prefix: str = "style_enc"):
    """(T_mel, 80) log-mel frames -> (c,) speaking-style feature.

    Three conv blocks (the last strided by 2), each conv -> group norm ->
    ReLU, then global average pooling over time and a two-layer head.
    """
    if mel_frames.ndim != 2 or mel_frames.shape[0] < 1:
        raise InvalidArgumentError("mel input must be a non-empty (T, bins) matrix")
    x = np.asarray(mel_frames, dtype=np.float64).T  # channels-first
    cache = {}
    for block, stride in (("1", 1), ("2", 1), ("3", 2)):
        x, cache[f"conv{block}"] = layers.conv1d_forward(
            x, params[f"{prefix}.conv{block}.w"], params[f"{prefix}.conv{block}.b"],
            stride=stride)
        x, cache[f"gn{block}"] = layers.groupnorm_forward(
            x, params[f"{prefix}.gn{block}.g"], params[f"{prefix}.gn{block}.b"], groups)
        x, cache[f"relu{block}"] = layers.relu_forward(x)
    cache["pool_t"] = x.shape[1]
    pooled = x.mean(axis=1)
    h, cache["fc1"] = layers.linear_forward(pooled, params[f"{prefix}.fc1.w"],
                                            params[f"{prefix}.fc1.b"])
    h, cache["relu_fc"] = layers.relu_forward(h)
    out, cache["fc2"] = layers.linear_forward(h, params[f"{prefix}.fc2.w"],
                                              params[f"{prefix}.fc2.b"])
    return out, cache


def style_encode_backward(g, cache, params, grads, prefix: str = "style_enc"):
    gh, gw, gb = layers.linear_backward(g, cache["fc2"], params[f"{prefix}.fc2.w"])
    layers.accumulate(grads, f"{prefix}.fc2.w", gw)
    layers.accumulate(grads, f"{prefix}.fc2.b", gb)
    gh = layers.relu_backward(gh, cache["relu_fc"])
    gp, gw, gb = layers.linear_backward(gh, cache["fc1"], params[f"{prefix}.fc1.w"])
    layers.accumulate(grads, f"{prefix}.fc1.w", gw)
    layers.accumulate(grads, f"{prefix}.fc1.b", gb)
    t_pool = cache["pool_t"]
    gx = np.repeat(gp[:, None] / t_pool, t_pool, axis=1)
    for block in ("3", "2", "1"):
        gx = layers.relu_backward(gx, cache[f"relu{block}"])
        gx, ggain, gbias = layers.groupnorm_backward(
            gx, cache[f"gn{block}"], params[f"{prefix}.gn{block}.g"])
        layers.accumulate(grads, f"{prefix}.gn{block}.g", ggain)
        layers.accumulate(grads, f"{prefix}.gn{block}.b", gbias)
        gx, gw, gb = layers.conv1d_backward(gx, cache[f"conv{block}"],
                                            params[f"{prefix}.conv{block}.w"])
        layers.accumulate(grads, f"{prefix}.conv{block}.w", gw)
        layers.accumulate(grads, f"{prefix}.conv{block}.b", gb)
