"""Motion decoder: fused per-frame inputs through causal transformer blocks.

Each frame's text representation and recalled motion feature are
concatenated, projected to the model width, tagged with sinusoidal positions,
and run through post-norm blocks of causal self-attention, causal
cross-attention over the projected text sequence, and a feed-forward layer.
Both attention stages are causally masked so that frame t of the output
never depends on inputs at frames > t. Decoding the whole sequence at once
keeps inference one pass while preserving the streaming-compatible contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import CapacityError, InvalidArgumentError


@dataclass
class DecoderConfig:
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    ff_width: int = 256
    max_frames: int = 512

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise InvalidArgumentError(
                f"d_model {self.d_model} not divisible by {self.heads} heads"
            )


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}
_MASK_CACHE: dict[int, np.ndarray] = {}


def positional_encoding(t: int, d_model: int) -> np.ndarray:
    key = (t, d_model)
    if key not in _PE_CACHE:
        pos = np.arange(t)[:, None]
        dim = np.arange(0, d_model, 2)[None, :]
        angles = pos / np.power(10000.0, dim / d_model)
        pe = np.zeros((t, d_model))
        pe[:, 0::2] = np.sin(angles)
        pe[:, 1::2] = np.cos(angles[:, : pe[:, 1::2].shape[1]])
        _PE_CACHE[key] = pe
    return _PE_CACHE[key]


def causal_mask(t: int) -> np.ndarray:
    if t not in _MASK_CACHE:
        mask = np.zeros((t, t))
        mask[np.triu_indices(t, k=1)] = -np.inf
        _MASK_CACHE[t] = mask
    return _MASK_CACHE[t]


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _attention_forward(params, prefix, x_q, x_kv, heads, mask, static_kv=None):
    """Masked multi-head attention. ``static_kv`` short-circuits the K/V
    projections with precomputed head tensors (frozen-memory fast path).

    The key projection carries no bias: a shared key offset shifts every
    score in a row equally and cancels in the softmax.
    """
    q, q_cache = layers.linear_forward(x_q, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    if static_kv is None:
        k = x_kv @ params[f"{prefix}.wk"]
        v, v_cache = layers.linear_forward(x_kv, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
        kh, vh = _split_heads(k, heads), _split_heads(v, heads)
        k_cache = x_kv
    else:
        kh, vh = static_kv
        k_cache = v_cache = None
    qh = _split_heads(q, heads)
    dh = qh.shape[-1]
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh) + mask
    probs = np.exp(scores - scores.max(axis=-1, keepdims=True))
    probs /= probs.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(probs @ vh)
    out, o_cache = layers.linear_forward(ctx, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    cache = (q_cache, k_cache, v_cache, o_cache, qh, kh, vh, probs, dh)
    return out, cache


def _attention_backward(g_out, cache, params, prefix, grads, inputs_only=False):
    """Returns (g_xq, g_xkv); g_xkv is None on the static path."""
    q_cache, k_cache, v_cache, o_cache, qh, kh, vh, probs, dh = cache
    g_ctx, gwo, gbo = layers.linear_backward(g_out, o_cache, params[f"{prefix}.wo"])
    if not inputs_only:
        layers.accumulate(grads, f"{prefix}.wo", gwo)
        layers.accumulate(grads, f"{prefix}.bo", gbo)
    heads = qh.shape[0]
    g_ctx_h = _split_heads(g_ctx, heads)
    g_probs = g_ctx_h @ vh.transpose(0, 2, 1)
    g_scores = probs * (g_probs - np.sum(g_probs * probs, axis=-1, keepdims=True))
    g_scores /= np.sqrt(dh)
    g_qh = g_scores @ kh
    gq = _merge_heads(g_qh)
    g_xq, gwq, gbq = layers.linear_backward(gq, q_cache, params[f"{prefix}.wq"])
    if not inputs_only:
        layers.accumulate(grads, f"{prefix}.wq", gwq)
        layers.accumulate(grads, f"{prefix}.bq", gbq)
    if k_cache is None:
        # frozen K/V path: their gradients terminate in frozen parameters
        return g_xq, None
    g_kh = g_scores.transpose(0, 2, 1) @ qh
    g_vh = probs.transpose(0, 2, 1) @ g_ctx_h
    g_k = _merge_heads(g_kh)
    g_xk = g_k @ params[f"{prefix}.wk"].T
    g_xv, gwv, gbv = layers.linear_backward(_merge_heads(g_vh), v_cache, params[f"{prefix}.wv"])
    if not inputs_only:
        layers.accumulate(grads, f"{prefix}.wk", k_cache.T @ g_k)
        layers.accumulate(grads, f"{prefix}.wv", gwv)
        layers.accumulate(grads, f"{prefix}.bv", gbv)
    return g_xq, g_xk + g_xv


def init_decoder_params(ps: layers.ParamStore, rng, n_txt: int, channels: int,
                        n_vertices: int, cfg: DecoderConfig, prefix: str = "dec") -> None:
    d = cfg.d_model
    w, b = layers.init_linear(rng, n_txt + channels, d)
    ps.add(f"{prefix}.fuse.w", w)
    ps.add(f"{prefix}.fuse.b", b)
    w, b = layers.init_linear(rng, n_txt, d)
    ps.add(f"{prefix}.memproj.w", w)
    ps.add(f"{prefix}.memproj.b", b)
    for i in range(cfg.layers):
        for attn in ("self", "cross"):
            for gate in ("q", "k", "v", "o"):
                w, b = layers.init_linear(rng, d, d)
                ps.add(f"{prefix}.l{i}.{attn}.w{gate}", w)
                if gate != "k":  # key bias cancels in the softmax
                    ps.add(f"{prefix}.l{i}.{attn}.b{gate}", b)
        for ln in ("ln1", "ln2", "ln3"):
            ps.add(f"{prefix}.l{i}.{ln}.g", np.ones(d))
            ps.add(f"{prefix}.l{i}.{ln}.b", np.zeros(d))
        w, b = layers.init_linear(rng, d, cfg.ff_width)
        ps.add(f"{prefix}.l{i}.ff.w1", w)
        ps.add(f"{prefix}.l{i}.ff.b1", b)
        w, b = layers.init_linear(rng, cfg.ff_width, d)
        ps.add(f"{prefix}.l{i}.ff.w2", w)
        ps.add(f"{prefix}.l{i}.ff.b2", b)
    # zero-initialized output head: a fresh decoder emits the template pose
    ps.add(f"{prefix}.head.w", np.zeros((d, n_vertices * 3)))
    ps.add(f"{prefix}.head.b", np.zeros(n_vertices * 3))


def decode_static(params, cfg: DecoderConfig, f_txt: np.ndarray, prefix: str = "dec"):
    """Precompute every f_txt-only quantity (frozen text path, stage 2)."""
    t = f_txt.shape[0]
    n_txt = f_txt.shape[1]
    mem = f_txt @ params[f"{prefix}.memproj.w"] + params[f"{prefix}.memproj.b"]
    static = {
        "t": t,
        "txt_fused": f_txt @ params[f"{prefix}.fuse.w"][:n_txt, :],
        "kv": [],
    }
    for i in range(cfg.layers):
        k = mem @ params[f"{prefix}.l{i}.cross.wk"]
        v = mem @ params[f"{prefix}.l{i}.cross.wv"] + params[f"{prefix}.l{i}.cross.bv"]
        static["kv"].append((_split_heads(k, cfg.heads), _split_heads(v, cfg.heads)))
    return static


def decode_forward(params, cfg: DecoderConfig, f_txt: np.ndarray, recalled: np.ndarray,
                   n_vertices: int, static=None, prefix: str = "dec"):
    """(T, n) text reps + (T, c) recalled features -> (T, V, 3) displacements."""
    f_txt = np.asarray(f_txt, dtype=np.float64)
    recalled = np.asarray(recalled, dtype=np.float64)
    if f_txt.shape[0] != recalled.shape[0]:
        raise InvalidArgumentError(
            f"text length {f_txt.shape[0]} != recalled length {recalled.shape[0]}"
        )
    t = f_txt.shape[0]
    if t > cfg.max_frames:
        raise CapacityError(f"sequence length {t} exceeds max_frames {cfg.max_frames}")
    n_txt = f_txt.shape[1]
    cache = {"t": t, "n_txt": n_txt, "static": static is not None}
    if static is None:
        fused_in = np.concatenate([f_txt, recalled], axis=1)
        x, cache["fuse"] = layers.linear_forward(
            fused_in, params[f"{prefix}.fuse.w"], params[f"{prefix}.fuse.b"])
        mem, cache["memproj"] = layers.linear_forward(
            f_txt, params[f"{prefix}.memproj.w"], params[f"{prefix}.memproj.b"])
    else:
        x = static["txt_fused"] + recalled @ params[f"{prefix}.fuse.w"][n_txt:, :] \
            + params[f"{prefix}.fuse.b"]
        mem = None
    x = x + positional_encoding(t, cfg.d_model)
    mask = causal_mask(t)
    cache["blocks"] = []
    for i in range(cfg.layers):
        blk = {}
        attn, blk["self"] = _attention_forward(
            params, f"{prefix}.l{i}.self", x, x, cfg.heads, mask)
        x, blk["ln1"] = layers.layernorm_forward(
            x + attn, params[f"{prefix}.l{i}.ln1.g"], params[f"{prefix}.l{i}.ln1.b"])
        static_kv = static["kv"][i] if static is not None else None
        cross, blk["cross"] = _attention_forward(
            params, f"{prefix}.l{i}.cross", x, mem, cfg.heads, mask, static_kv=static_kv)
        x, blk["ln2"] = layers.layernorm_forward(
            x + cross, params[f"{prefix}.l{i}.ln2.g"], params[f"{prefix}.l{i}.ln2.b"])
        h, blk["ff1"] = layers.linear_forward(
            x, params[f"{prefix}.l{i}.ff.w1"], params[f"{prefix}.l{i}.ff.b1"])
        h, blk["relu"] = layers.relu_forward(h)
        ff, blk["ff2"] = layers.linear_forward(
            h, params[f"{prefix}.l{i}.ff.w2"], params[f"{prefix}.l{i}.ff.b2"])
        x, blk["ln3"] = layers.layernorm_forward(
            x + ff, params[f"{prefix}.l{i}.ln3.g"], params[f"{prefix}.l{i}.ln3.b"])
        cache["blocks"].append(blk)
    out, cache["head"] = layers.linear_forward(
        x, params[f"{prefix}.head.w"], params[f"{prefix}.head.b"])
    return out.reshape(t, n_vertices, 3), cache


def decode_backward(g_motion, cache, params, cfg: DecoderConfig, grads,
                    inputs_only: bool = False, prefix: str = "dec"):
    """Backprop through decode_forward.

    Returns (g_f_txt, g_recalled). With ``inputs_only`` no parameter
    gradients are accumulated and g_f_txt is None (frozen text path).
    """
    t = cache["t"]
    g = g_motion.reshape(t, -1)
    gx, gw, gb = layers.linear_backward(g, cache["head"], params[f"{prefix}.head.w"])
    if not inputs_only:
        layers.accumulate(grads, f"{prefix}.head.w", gw)
        layers.accumulate(grads, f"{prefix}.head.b", gb)
    g_mem_total = None
    for i in reversed(range(cfg.layers)):
        blk = cache["blocks"][i]
        gx, ggain, gbias = layers.layernorm_backward(
            gx, blk["ln3"], params[f"{prefix}.l{i}.ln3.g"])
        if not inputs_only:
            layers.accumulate(grads, f"{prefix}.l{i}.ln3.g", ggain)
            layers.accumulate(grads, f"{prefix}.l{i}.ln3.b", gbias)
        gh, gw2, gb2 = layers.linear_backward(gx, blk["ff2"], params[f"{prefix}.l{i}.ff.w2"])
        gh = layers.relu_backward(gh, blk["relu"])
        gff_in, gw1, gb1 = layers.linear_backward(gh, blk["ff1"], params[f"{prefix}.l{i}.ff.w1"])
        if not inputs_only:
            layers.accumulate(grads, f"{prefix}.l{i}.ff.w2", gw2)
            layers.accumulate(grads, f"{prefix}.l{i}.ff.b2", gb2)
            layers.accumulate(grads, f"{prefix}.l{i}.ff.w1", gw1)
            layers.accumulate(grads, f"{prefix}.l{i}.ff.b1", gb1)
        gx = gx + gff_in
        gx, ggain, gbias = layers.layernorm_backward(
            gx, blk["ln2"], params[f"{prefix}.l{i}.ln2.g"])
        if not inputs_only:
            layers.accumulate(grads, f"{prefix}.l{i}.ln2.g", ggain)
            layers.accumulate(grads, f"{prefix}.l{i}.ln2.b", gbias)
        g_q, g_mem = _attention_backward(
            gx, blk["cross"], params, f"{prefix}.l{i}.cross", grads, inputs_only)
        if g_mem is not None:
            g_mem_total = g_mem if g_mem_total is None else g_mem_total + g_mem
        gx = gx + g_q
        gx, ggain, gbias = layers.layernorm_backward(
            gx, blk["ln1"], params[f"{prefix}.l{i}.ln1.g"])
        if not inputs_only:
            layers.accumulate(grads, f"{prefix}.l{i}.ln1.g", ggain)
            layers.accumulate(grads, f"{prefix}.l{i}.ln1.b", gbias)
        g_q, g_kv = _attention_backward(
            gx, blk["self"], params, f"{prefix}.l{i}.self", grads, inputs_only)
        gx = gx + g_q + g_kv
    # positional encoding is additive: gradient passes through unchanged
    n_txt = cache["n_txt"]
    if cache["static"]:
        g_recalled = gx @ params[f"{prefix}.fuse.w"][n_txt:, :].T
        return None, g_recalled
    g_fused_in, gw, gb = layers.linear_backward(gx, cache["fuse"], params[f"{prefix}.fuse.w"])
    if not inputs_only:
        layers.accumulate(grads, f"{prefix}.fuse.w", gw)
        layers.accumulate(grads, f"{prefix}.fuse.b", gb)
    g_f_txt = g_fused_in[:, :n_txt]
    g_recalled = g_fused_in[:, n_txt:]
    if g_mem_total is not None:
        g_mem_in, gw, gb = layers.linear_backward(
            g_mem_total, cache["memproj"], params[f"{prefix}.memproj.w"])
        if not inputs_only:
            layers.accumulate(grads, f"{prefix}.memproj.w", gw)
            layers.accumulate(grads, f"{prefix}.memproj.b", gb)
        g_f_txt = g_f_txt + g_mem_in
    return g_f_txt, g_recalled


def decode(params, cfg: DecoderConfig, f_txt: np.ndarray, recalled: np.ndarray,
           n_vertices: int, prefix: str = "dec") -> np.ndarray:
    """Forward-only decode returning the (T, V, 3) motion array."""
    out, _ = decode_forward(params, cfg, f_txt, recalled, n_vertices, prefix=prefix)
    return out
