"""Central-difference gradient checks for every trainable operation.

Each check wraps one differentiable piece as a closure mapping a parameter
dict to (scalar loss, analytic grads) and hands it to numerics.grad_check.
Toy dimensions keep the whole suite well under the runtime budget while
exercising every backward path in the package.
"""

from __future__ import annotations

import numpy as np

from . import losses, model

from .decoder import decode_backward, decode_forward
from .encoders import TextSource, style_encode, style_encode_backward, text_encode, text_encode_backward
from .layers import ParamStore
from .memory import (
    MemoryBank,
    recall_backward,
    style_weights,
    style_weights_backward,
    value_address_backward,
    value_address_forward,
)
from .numerics import GradCheckReport, grad_check, softmax_rows, softmax_rows_backward
from .training import TrainConfig

TOY_MEL_BINS = 8


def toy_config() -> TrainConfig:
    return TrainConfig(
        n_slots=3,
        channels=6,
        d_txt=5,
        n_vertices=4,
        heads=2,
        layers=2,
        ff_width=8,
        style_width=8,
        style_groups=2,
        kappa=3.0,
        lambda1=0.1,
        lambda2=0.1,
        margin=0.05,
    )


def _toy_params(cfg: TrainConfig, rng: np.random.Generator) -> ParamStore:
    params = model.init_params(cfg, rng, mel_bins=TOY_MEL_BINS)
    # the default zero head / neutral style head would hide gradient bugs;
    # head scale stays small so the toy loss magnitude keeps finite
    # differences well conditioned
    params["dec.head.w"] = rng.normal(0.0, 0.05, size=params["dec.head.w"].shape)
    params["dec.head.b"] = rng.normal(0.0, 0.02, size=params["dec.head.b"].shape)
    params["style_head.gate.w"] = rng.normal(0.0, 0.4, size=params["style_head.gate.w"].shape)
    params["style_head.gate.b"] = rng.normal(0.0, 0.2, size=params["style_head.gate.b"].shape)
    params["style_head.scale.w"] = rng.normal(0.0, 0.4, size=params["style_head.scale.w"].shape)
    return params


def _toy_clip(cfg: TrainConfig, rng: np.random.Generator) -> model.PreparedClip:
    t = 3
    motion = rng.normal(0.0, 0.01, size=(t, cfg.n_vertices, 3))
    return model.PreparedClip(
        clip_id="toy", speaker_id=0,
        ids=np.array([1, 1, 4], dtype=np.int64),
        motion=motion, flat=motion.reshape(t, -1),
        mel=rng.normal(0.0, 1.0, size=(3, TOY_MEL_BINS)),
    )


def _merged(base: ParamStore, work) -> dict:
    full = {name: base[name] for name in base.names()}
    full.update(work)
    return full


def _subset(params: ParamStore, names) -> dict:
    return {n: params[n] for n in names}


def _quad(x: np.ndarray) -> tuple[float, np.ndarray]:
    """0.5 * sum(x^2) scalarizer with its gradient."""
    return 0.5 * float(np.sum(x * x)), x


def check_quadratic() -> GradCheckReport:
    def op(p):
        x = p["x"]
        return float(np.sum(x * x)), {"x": 2.0 * x}

    return grad_check(op, {"x": np.array([3.0])}, name="numerics.quadratic")


def check_motion_encode(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    clip = _toy_clip(cfg, rng)
    names = ["motion_enc.w", "motion_enc.b"]

    def op(work):
        full = _merged(base, work)
        feats, cache = model.motion_encode(clip.flat, full)
        loss, g = _quad(feats)
        grads: dict = {}
        model.motion_encode_backward(g, cache, full, grads)
        return loss, {n: grads[n] for n in names}

    return grad_check(op, _subset(base, names), name="encoders.motion_encode")


def check_text_encode(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    source = TextSource(viseme_ids=np.array([2, 2, 5, 7], dtype=np.int64))
    names = ["text_enc.emb", "text_enc.proj.w", "text_enc.proj.b"]

    def op(work):
        full = _merged(base, work)
        f_txt, cache = text_encode(source, 6, full)  # resample 4 -> 6 frames
        loss, g = _quad(f_txt)
        grads: dict = {}
        text_encode_backward(g, cache, full, grads)
        return loss, grads

    return grad_check(op, _subset(base, names), name="encoders.text_encode")


def check_style_encode(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    mel = rng.normal(0.0, 1.0, size=(4, TOY_MEL_BINS))
    names = [n for n in base.names() if n.startswith("style_enc.")]

    def op(work):
        full = _merged(base, work)
        f_s, cache = style_encode(mel, full, groups=cfg.style_groups)
        loss, g = _quad(f_s)
        grads: dict = {}
        style_encode_backward(g, cache, full, grads)
        return loss, grads

    return grad_check(op, _subset(base, names), name="encoders.style_encode")


def check_value_path(seed: int = 0) -> GradCheckReport:
    """Value addressing -> recall -> memory reconstruction loss."""
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    query = rng.normal(0.0, 1.0, size=(2, cfg.channels))
    slots = rng.normal(0.0, 0.5, size=(cfg.n_slots, cfg.channels))

    def op(p):
        bank = MemoryBank(slots=p["slots"], kappa=cfg.kappa)
        addr, cache = value_address_forward(p["query"], bank)
        recalled = addr @ p["slots"]
        diff = p["query"] - recalled
        loss = float(np.sum(diff * diff))
        g_rec = -2.0 * diff
        g_addr, g_slots = recall_backward(g_rec, addr, p["slots"])
        g_query, g_slots_addr = value_address_backward(g_addr, cache)
        return loss, {"query": g_query + 2.0 * diff, "slots": g_slots + g_slots_addr}

    return grad_check(op, {"query": query, "slots": slots}, name="memory.value_path")


def check_key_path(seed: int = 0) -> GradCheckReport:
    """Key softmax + alignment KL + recall, gradients to both pathways."""
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    f_txt = rng.normal(0.0, 1.0, size=(2, cfg.n_slots))
    query = rng.normal(0.0, 1.0, size=(2, cfg.channels))
    slots = rng.normal(0.0, 0.5, size=(cfg.n_slots, cfg.channels))

    def op(p):
        key = softmax_rows(p["f_txt"])
        bank = MemoryBank(slots=p["slots"], kappa=cfg.kappa)
        val, va_cache = value_address_forward(p["query"], bank)
        l_align = losses.loss_align(key, val)
        recalled = key @ p["slots"]
        l_rec, g_rec = _quad(recalled)
        g_key, g_slots = recall_backward(g_rec, key, p["slots"])
        gk, gv = losses.loss_align_grads(key, val)
        g_ftxt = softmax_rows_backward(key, g_key + gk)
        g_query, g_slots_addr = value_address_backward(gv, va_cache)
        return l_align + l_rec, {
            "f_txt": g_ftxt, "query": g_query, "slots": g_slots + g_slots_addr,
        }

    return grad_check(op, {"f_txt": f_txt, "query": query, "slots": slots},
                      name="memory.key_path")


def check_stylize(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    key = softmax_rows(rng.normal(0.0, 1.0, size=(2, cfg.n_slots)))
    slots = rng.normal(0.0, 0.5, size=(cfg.n_slots, cfg.channels))
    names = ["style_head.gate.w", "style_head.gate.b",
             "style_head.scale.w", "style_head.scale.b"]
    f_s = rng.normal(0.0, 1.0, size=cfg.channels)

    def op(work):
        full = _merged(base, work)
        w, cache = style_weights(f_s, full)
        recalled = (key * w[None, :]) @ slots
        loss, g_rec = _quad(recalled)
        g_w = np.sum(key * (g_rec @ slots.T), axis=0)
        grads: dict = {}
        style_weights_backward(g_w, cache, full, grads)
        return loss, grads

    return grad_check(op, _subset(base, names), name="memory.stylize")


def check_decoder(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    dec_cfg = model.decoder_config(cfg)
    f_txt = rng.normal(0.0, 1.0, size=(3, cfg.n_slots))
    recalled = rng.normal(0.0, 1.0, size=(3, cfg.channels))
    names = [n for n in base.names() if n.startswith("dec.")]

    def op(work):
        full = _merged(base, work)
        out, cache = decode_forward(full, dec_cfg, f_txt, recalled, cfg.n_vertices)
        loss, g = _quad(out)
        grads: dict = {}
        decode_backward(g, cache, full, dec_cfg, grads)
        return loss, grads

    return grad_check(op, _subset(base, names), name="decoder.decode")


def check_losses(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    ref = rng.normal(0.0, 0.01, size=(3, cfg.n_vertices, 3))
    mask = np.array([1, 3])

    def op(p):
        vh = p["v_hat"]
        loss = (losses.loss_mse(ref, vh) + losses.loss_vel(ref, vh)
                + losses.loss_lip(ref, vh, mask))
        g = (losses.loss_mse_grad(ref, vh) + losses.loss_vel_grad(ref, vh)
             + losses.loss_lip_grad(ref, vh, mask))
        return loss, {"v_hat": g}

    v_hat = ref + rng.normal(0.0, 0.01, size=ref.shape)
    return grad_check(op, {"v_hat": v_hat}, name="losses.mse_vel_lip")


def check_triplet(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    trip = {
        "a": rng.normal(0.0, 1.0, size=4),
        "p": rng.normal(0.0, 1.0, size=4),
        "n": rng.normal(0.0, 1.0, size=4),
    }

    def op(p):
        loss, ga, gp, gn = losses.loss_style_grads(p["a"], p["p"], p["n"], margin=0.5)
        return loss, {"a": ga, "p": gp, "n": gn}

    return grad_check(op, trip, name="losses.style_triplet")


def check_stage1(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    clip = _toy_clip(cfg, rng)
    names = base.stage1_names()

    def op(work):
        store = base.copy()
        for name, value in work.items():
            store[name] = value
        parts, grads = model.stage1_clip_loss(store, cfg, clip)
        return parts.total, grads

    return grad_check(op, _subset(base, names), name="training.stage1_total")


def check_stage2(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    clip = _toy_clip(cfg, rng)
    pos_mel = rng.normal(0.0, 1.0, size=(3, TOY_MEL_BINS))
    neg_mel = rng.normal(0.0, 1.0, size=(4, TOY_MEL_BINS))
    lip_mask = np.array([1, 3])
    names = base.stage2_names()

    def op(work):
        store = base.copy()
        for name, value in work.items():
            store[name] = value
        static = model.stage2_static(store, cfg, clip)
        parts, grads = model.stage2_clip_loss(store, cfg, clip, static, lip_mask,
                                              pos_mel=pos_mel, neg_mel=neg_mel)
        return parts.total, grads

    return grad_check(op, _subset(base, names), name="training.stage2_total")


def check_joint(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    base = _toy_params(cfg, rng)
    clip = _toy_clip(cfg, rng)
    pos_mel = rng.normal(0.0, 1.0, size=(3, TOY_MEL_BINS))
    neg_mel = rng.normal(0.0, 1.0, size=(4, TOY_MEL_BINS))
    lip_mask = np.array([1, 3])

    def op(work):
        store = base.copy()
        for name, value in work.items():
            store[name] = value
        parts, grads = model.joint_clip_loss(store, cfg, clip, lip_mask,
                                             pos_mel=pos_mel, neg_mel=neg_mel)
        return parts.total, grads

    return grad_check(op, _subset(base, base.names()), name="training.joint_total")


SUITES = {
    "numerics": [check_quadratic],
    "encoders": [check_motion_encode, check_text_encode, check_style_encode],
    "memory": [check_value_path, check_key_path, check_stylize],
    "decoder": [check_decoder],
    "losses": [check_losses, check_triplet],
    "stage1": [check_stage1],
    "stage2": [check_stage2],
    "joint": [check_joint],
}


def run_suite(which: str = "all") -> list[GradCheckReport]:
    if which == "all":
        groups = list(SUITES)
    elif which in SUITES:
        groups = [which]
    else:
        from .errors import InvalidArgumentError
        raise InvalidArgumentError(
            f"unknown gradcheck group {which!r}; choose all|" + "|".join(SUITES)
        )
    reports = []
    for group in groups:
        for fn in SUITES[group]:
            reports.append(fn())
    return reports
