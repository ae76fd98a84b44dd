"""Wiring of encoders, memory, and decoder into the trainable pipelines.

Stage 1 stores motion features in the memory (value addressing + memory
reconstruction), aligns key addresses to value addresses, and decodes from
key-recalled features. Stage 2 freezes all of that and learns only the
audio-driven style pathway that rescales the memory slots per clip. The
joint variant trains everything at once under the combined objective and
exists as the end-to-end baseline.

Functions here take any config object exposing the TrainConfig attributes
(n_slots, channels, kappa, ...) and a ParamStore; the optimization loop
lives in ``training``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .audio import mel_spectrogram
from .corpus import Clip, MotionSeq
from .decoder import DecoderConfig, decode_backward, decode_forward, decode_static, init_decoder_params
from .encoders import (
    TextSource,
    expand_phonemes,
    init_style_encoder,
    motion_encode,
    motion_encode_backward,
    style_encode,
    style_encode_backward,
    text_encode,
    text_encode_backward,
)
from .layers import ParamStore, accumulate, init_linear
from .memory import (
    MemoryBank,
    init_slots,
    recall_backward,
    style_weights,
    style_weights_backward,
    value_address_backward,
    value_address_forward,
)
from .numerics import softmax_rows, softmax_rows_backward


def decoder_config(cfg) -> DecoderConfig:
    return DecoderConfig(
        d_model=cfg.channels,
        heads=cfg.heads,
        layers=cfg.layers,
        ff_width=cfg.ff_width,
        max_frames=cfg.max_frames,
    )


def init_params(cfg, rng: np.random.Generator, mel_bins: int = 80) -> ParamStore:
    """Fresh parameters for every module; style pathway flagged stage-2.

    The style gate starts at zero and the style scale at bias 2, so the
    initial style weights are exactly 1 and stage 2 begins at the stage-1
    behaviour.
    """
    ps = ParamStore()
    w, b = init_linear(rng, cfg.n_vertices * 3, cfg.channels)
    ps.add("motion_enc.w", w / getattr(cfg, "motion_input_scale", 1.0))
    ps.add("motion_enc.b", b)
    ps.add("text_enc.emb", rng.normal(0.0, 0.5, size=(cfg.n_visemes, cfg.d_txt)))
    w, b = init_linear(rng, cfg.d_txt, cfg.n_slots)
    ps.add("text_enc.proj.w", w)
    ps.add("text_enc.proj.b", b)
    ps.add("memory.slots", init_slots(rng, cfg.n_slots, cfg.channels,
                                      gain=getattr(cfg, "slot_init_gain", 1.0)))
    init_decoder_params(ps, rng, cfg.n_slots, cfg.channels, cfg.n_vertices, decoder_config(cfg))
    init_style_encoder(ps, rng, mel_bins, cfg.style_width, cfg.channels)
    ps.add("style_head.gate.w", np.zeros((cfg.channels, cfg.n_slots)), stage2=True)
    ps.add("style_head.gate.b", np.zeros(cfg.n_slots), stage2=True)
    ps.add("style_head.scale.w", np.zeros(cfg.channels), stage2=True)
    ps.add("style_head.scale.b", np.array([2.0]), stage2=True)
    return ps


@dataclass
class PreparedClip:
    """Per-clip arrays the training loops consume."""

    clip_id: str
    speaker_id: int
    ids: np.ndarray          # (T,) per-frame viseme ids
    motion: np.ndarray       # (T, V, 3)
    flat: np.ndarray         # (T, V*3)
    mel: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.motion.shape[0]


def prepare_clip(clip: Clip, with_mel: bool = False) -> PreparedClip:
    frames = np.asarray(clip.motion.frames, dtype=np.float64)
    t = frames.shape[0]
    return PreparedClip(
        clip_id=clip.clip_id,
        speaker_id=clip.speaker_id,
        ids=expand_phonemes(clip.phonemes),
        motion=frames,
        flat=frames.reshape(t, -1),
        mel=mel_spectrogram(clip.audio).frames if with_mel else None,
    )


# -- stage 1 -------------------------------------------------------------------

def stage1_clip_loss(params, cfg, pclip: PreparedClip, want_grads: bool = True):
    """Losses and (optionally) gradients of the stage-1 objective on one clip."""
    dec_cfg = decoder_config(cfg)
    slots = params["memory.slots"]
    bank = MemoryBank(slots=slots, kappa=cfg.kappa)
    lam1 = cfg.lambda1

    feats, me_cache = motion_encode(pclip.flat, params)
    val_addr, va_cache = value_address_forward(feats, bank)
    recalled_val = val_addr @ slots
    mem_diff = feats - recalled_val
    l_mem = float(np.sum(mem_diff**2))

    f_txt, te_cache = text_encode(TextSource(viseme_ids=pclip.ids), pclip.n_frames, params)
    key_addr = softmax_rows(f_txt)
    l_align = losses.loss_align(key_addr, val_addr)
    recalled_key = key_addr @ slots

    v_hat, dcache = decode_forward(params, dec_cfg, f_txt, recalled_key, cfg.n_vertices)
    parts = losses.LossBreakdown(
        mse=losses.loss_mse(pclip.motion, v_hat),
        vel=losses.loss_vel(pclip.motion, v_hat),
        mem=l_mem,
        align=l_align,
    )
    parts.total = losses.stage1_total(parts, lam1)
    if not want_grads:
        return parts, None

    grads: dict[str, np.ndarray] = {}
    g_vhat = losses.loss_mse_grad(pclip.motion, v_hat) + losses.loss_vel_grad(pclip.motion, v_hat)
    g_ftxt, g_rk = decode_backward(g_vhat, dcache, params, dec_cfg, grads)

    g_key, g_slots_rk = recall_backward(g_rk, key_addr, slots)
    accumulate(grads, "memory.slots", g_slots_rk)

    gk_align, gv_align = losses.loss_align_grads(key_addr, val_addr)
    g_key = g_key + lam1 * gk_align
    g_val = lam1 * gv_align

    g_recalled_val = -2.0 * lam1 * mem_diff
    g_val_recall, g_slots_rv = recall_backward(g_recalled_val, val_addr, slots)
    g_val = g_val + g_val_recall
    accumulate(grads, "memory.slots", g_slots_rv)

    g_feats, g_slots_addr = value_address_backward(g_val, va_cache)
    accumulate(grads, "memory.slots", g_slots_addr)
    if not cfg.mem_stop_grad:
        g_feats = g_feats + 2.0 * lam1 * mem_diff

    g_ftxt = g_ftxt + softmax_rows_backward(key_addr, g_key)
    text_encode_backward(g_ftxt, te_cache, params, grads)
    motion_encode_backward(g_feats, me_cache, params, grads)
    return parts, grads


# -- stage 2 -------------------------------------------------------------------

def stage2_static(params, cfg, pclip: PreparedClip) -> dict:
    """Everything the frozen text pathway contributes, computed once per clip."""
    f_txt, _ = text_encode(TextSource(viseme_ids=pclip.ids), pclip.n_frames, params)
    key_addr = softmax_rows(f_txt)
    return {
        "f_txt": f_txt,
        "key": key_addr,
        "dec": decode_static(params, decoder_config(cfg), f_txt),
    }


def stage2_clip_loss(params, cfg, pclip: PreparedClip, static: dict, lip_mask,
                     pos_mel=None, neg_mel=None, want_grads: bool = True):
    """Stage-2 losses/gradients on one clip; only style-path params get grads.

    The triplet term is skipped entirely when ``style_loss_weight`` is zero
    or no positive/negative mels are supplied.
    """
    dec_cfg = decoder_config(cfg)
    slots = params["memory.slots"]
    lam2 = cfg.lambda2
    use_style = cfg.style_loss_weight > 0.0 and pos_mel is not None and neg_mel is not None

    f_s, s_cache = style_encode(pclip.mel, params, groups=cfg.style_groups)
    weights, w_cache = style_weights(f_s, params)
    key_addr = static["key"]
    recalled = (key_addr * weights[None, :]) @ slots
    v_hat, dcache = decode_forward(params, dec_cfg, static["f_txt"], recalled,
                                   cfg.n_vertices, static=static["dec"])

    parts = losses.LossBreakdown(
        mse=losses.loss_mse(pclip.motion, v_hat),
        vel=losses.loss_vel(pclip.motion, v_hat),
        lip=losses.loss_lip(pclip.motion, v_hat, lip_mask),
    )
    trip = None
    if use_style:
        f_pos, pos_cache = style_encode(pos_mel, params, groups=cfg.style_groups)
        f_neg, neg_cache = style_encode(neg_mel, params, groups=cfg.style_groups)
        raw, g_anchor, g_pos, g_neg = losses.loss_style_grads(f_s, f_pos, f_neg, cfg.margin)
        parts.style = cfg.style_loss_weight * raw
        trip = (g_anchor, g_pos, g_neg, pos_cache, neg_cache)
    parts.total = losses.stage2_total(parts, lam2)
    if not want_grads:
        return parts, None

    grads: dict[str, np.ndarray] = {}
    g_vhat = (
        losses.loss_mse_grad(pclip.motion, v_hat)
        + losses.loss_vel_grad(pclip.motion, v_hat)
        + lam2 * losses.loss_lip_grad(pclip.motion, v_hat, lip_mask)
    )
    _, g_recalled = decode_backward(g_vhat, dcache, params, dec_cfg, grads, inputs_only=True)
    g_weights = np.sum(key_addr * (g_recalled @ slots.T), axis=0)
    g_fs = style_weights_backward(g_weights, w_cache, params, grads)
    if trip is not None:
        g_anchor, g_pos, g_neg, pos_cache, neg_cache = trip
        coeff = lam2 * cfg.style_loss_weight
        g_fs = g_fs + coeff * g_anchor
        style_encode_backward(coeff * g_pos, pos_cache, params, grads)
        style_encode_backward(coeff * g_neg, neg_cache, params, grads)
    style_encode_backward(g_fs, s_cache, params, grads)
    return parts, grads


# -- end-to-end baseline --------------------------------------------------------

def joint_clip_loss(params, cfg, pclip: PreparedClip, lip_mask,
                    pos_mel=None, neg_mel=None, want_grads: bool = True):
    """End-to-end objective: both stage objectives at once, no staging.

    The general readout (unstylized memory) carries the stage-1 terms and
    the stylized readout carries the stage-2 terms, so one decoder and one
    memory must serve both, trained simultaneously from scratch.
    """
    dec_cfg = decoder_config(cfg)
    slots = params["memory.slots"]
    bank = MemoryBank(slots=slots, kappa=cfg.kappa)
    lam1, lam2 = cfg.lambda1, cfg.lambda2
    use_style = cfg.style_loss_weight > 0.0 and pos_mel is not None and neg_mel is not None

    feats, me_cache = motion_encode(pclip.flat, params)
    val_addr, va_cache = value_address_forward(feats, bank)
    recalled_val = val_addr @ slots
    mem_diff = feats - recalled_val
    l_mem = float(np.sum(mem_diff**2))

    f_txt, te_cache = text_encode(TextSource(viseme_ids=pclip.ids), pclip.n_frames, params)
    key_addr = softmax_rows(f_txt)
    l_align = losses.loss_align(key_addr, val_addr)

    recalled_gen = key_addr @ slots
    v_gen, dcache_gen = decode_forward(params, dec_cfg, f_txt, recalled_gen, cfg.n_vertices)

    f_s, s_cache = style_encode(pclip.mel, params, groups=cfg.style_groups)
    weights, w_cache = style_weights(f_s, params)
    styled_addr = key_addr * weights[None, :]
    recalled_sty = styled_addr @ slots
    v_sty, dcache_sty = decode_forward(params, dec_cfg, f_txt, recalled_sty, cfg.n_vertices)

    parts = losses.LossBreakdown(
        mse=losses.loss_mse(pclip.motion, v_gen) + losses.loss_mse(pclip.motion, v_sty),
        vel=losses.loss_vel(pclip.motion, v_gen) + losses.loss_vel(pclip.motion, v_sty),
        mem=l_mem,
        align=l_align,
        lip=losses.loss_lip(pclip.motion, v_sty, lip_mask),
    )
    trip = None
    if use_style:
        f_pos, pos_cache = style_encode(pos_mel, params, groups=cfg.style_groups)
        f_neg, neg_cache = style_encode(neg_mel, params, groups=cfg.style_groups)
        raw, g_anchor, g_pos, g_neg = losses.loss_style_grads(f_s, f_pos, f_neg, cfg.margin)
        parts.style = cfg.style_loss_weight * raw
        trip = (g_anchor, g_pos, g_neg, pos_cache, neg_cache)
    parts.total = parts.mse + parts.vel + lam1 * (parts.mem + parts.align) \
        + lam2 * (parts.lip + parts.style)
    if not want_grads:
        return parts, None

    grads: dict[str, np.ndarray] = {}
    # stylized readout
    g_vsty = (
        losses.loss_mse_grad(pclip.motion, v_sty)
        + losses.loss_vel_grad(pclip.motion, v_sty)
        + lam2 * losses.loss_lip_grad(pclip.motion, v_sty, lip_mask)
    )
    g_ftxt_sty, g_recalled_sty = decode_backward(g_vsty, dcache_sty, params, dec_cfg, grads)
    g_styled, g_slots_r = recall_backward(g_recalled_sty, styled_addr, slots)
    accumulate(grads, "memory.slots", g_slots_r)
    g_key = g_styled * weights[None, :]
    g_weights = np.sum(key_addr * g_styled, axis=0)

    # general readout
    g_vgen = losses.loss_mse_grad(pclip.motion, v_gen) + losses.loss_vel_grad(pclip.motion, v_gen)
    g_ftxt_gen, g_recalled_gen = decode_backward(g_vgen, dcache_gen, params, dec_cfg, grads)
    g_key_gen, g_slots_g = recall_backward(g_recalled_gen, key_addr, slots)
    accumulate(grads, "memory.slots", g_slots_g)
    g_key = g_key + g_key_gen

    gk_align, gv_align = losses.loss_align_grads(key_addr, val_addr)
    g_key = g_key + lam1 * gk_align
    g_val = lam1 * gv_align

    g_recalled_val = -2.0 * lam1 * mem_diff
    g_val_recall, g_slots_rv = recall_backward(g_recalled_val, val_addr, slots)
    g_val = g_val + g_val_recall
    accumulate(grads, "memory.slots", g_slots_rv)

    g_feats, g_slots_addr = value_address_backward(g_val, va_cache)
    accumulate(grads, "memory.slots", g_slots_addr)
    if not cfg.mem_stop_grad:
        g_feats = g_feats + 2.0 * lam1 * mem_diff

    g_ftxt = g_ftxt_sty + g_ftxt_gen + softmax_rows_backward(key_addr, g_key)
    text_encode_backward(g_ftxt, te_cache, params, grads)
    motion_encode_backward(g_feats, me_cache, params, grads)

    g_fs = style_weights_backward(g_weights, w_cache, params, grads)
    if trip is not None:
        g_anchor, g_pos, g_neg, pos_cache, neg_cache = trip
        coeff = lam2 * cfg.style_loss_weight
        g_fs = g_fs + coeff * g_anchor
        style_encode_backward(coeff * g_pos, pos_cache, params, grads)
        style_encode_backward(coeff * g_neg, neg_cache, params, grads)
    style_encode_backward(g_fs, s_cache, params, grads)
    return parts, grads


# -- synthesis -------------------------------------------------------------------

def general_motion(params, cfg, source: TextSource, t_out: int) -> np.ndarray:
    """Speaker-neutral synthesis from the unstylized memory."""
    f_txt, _ = text_encode(source, t_out, params)
    key_addr = softmax_rows(f_txt)
    recalled = key_addr @ params["memory.slots"]
    out, _ = decode_forward(params, decoder_config(cfg), f_txt, recalled, cfg.n_vertices)
    return out


def personalized_motion(params, cfg, source: TextSource, t_out: int,
                        mel: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Stylized synthesis; ``weights`` overrides the audio-derived weights
    (used by the neutral-stylization checks)."""
    f_txt, _ = text_encode(source, t_out, params)
    key_addr = softmax_rows(f_txt)
    if weights is None:
        f_s, _ = style_encode(mel, params, groups=cfg.style_groups)
        weights, _ = style_weights(f_s, params)
    recalled = (key_addr * np.asarray(weights)[None, :]) @ params["memory.slots"]
    out, _ = decode_forward(params, decoder_config(cfg), f_txt, recalled, cfg.n_vertices)
    return out


def style_feature(params, cfg, mel: np.ndarray) -> np.ndarray:
    f_s, _ = style_encode(mel, params, groups=cfg.style_groups)
    return f_s


def motion_seq(array: np.ndarray) -> MotionSeq:
    return MotionSeq(frames=array)
