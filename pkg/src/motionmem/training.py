"""Two-stage training, parameter freezing, optimization, and checkpoints.

Stage 1 trains the motion encoder, memory slots, viseme embeddings, the
slot projection, and the decoder. Stage 2 loads a finished stage-1
checkpoint, freezes every stage-1 tensor (verified bitwise by the tests),
and updates only the style pathway. ``train_joint`` is the end-to-end
baseline used for the training-strategy comparison.

All randomness derives from the config seed; two runs with identical
configs produce byte-identical checkpoints and loss logs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model
from .corpus import Corpus, MotionSeq
from .encoders import TextSource
from .errors import (
    DataFormatError,
    InvalidArgumentError,
    InvalidModeError,
    NumericalFailureError,
)
from .layers import ParamStore
from .losses import LossBreakdown

CKPT_MAGIC = b"MTCK"
CKPT_VERSION = 1

LOG_COLUMNS = ["epoch", "mse", "vel", "mem", "align", "lip", "style", "total"]


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 100
    lr: float | None = None  # resolved per stage: 1e-4 (stage 1), 5e-5 (stage 2)
    batch_size: int = 4
    seed: int = 0
    lambda1: float = 0.01
    lambda2: float = 0.01
    margin: float = 0.2
    kappa: float = 16.0
    n_slots: int = 32
    channels: int = 64
    d_txt: int = 64
    n_visemes: int = 10
    n_vertices: int = 24
    heads: int = 4
    layers: int = 2
    ff_width: int = 256
    max_frames: int = 512
    style_width: int = 128
    style_groups: int = 16
    stage2_train_projections: bool = True
    mem_stop_grad: bool = False
    style_loss_weight: float = 1.0
    # expected displacement magnitude in meters; the motion encoder init is
    # scaled by 1/this so motion features start O(1) like the text features
    motion_input_scale: float = 0.01
    # slot init gain; slots must start at motion-feature scale or recall
    # (a convex combination of slots) cannot reach the features it stores
    slot_init_gain: float = 4.0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise InvalidArgumentError(f"stage must be 1 or 2, got {self.stage}")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.lr is not None and not self.lr > 0:
            raise InvalidArgumentError("lr must be > 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-4 if self.stage == 1 else 5e-5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def parse_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values are typed
    by the matching TrainConfig field."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise InvalidArgumentError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _parse_value(key, value, types[key], f"{path}:{lineno}")
    return out


def _parse_value(key: str, value: str, ftype, where: str):
    try:
        if ftype in ("int", int):
            return int(value)
        if ftype in ("bool", bool):
            return _BOOL_WORDS[value.lower()]
        if ftype in ("float", float):
            return float(value)
        # float | None fields
        if value.lower() in ("none", "default"):
            return None
        return float(value)
    except (ValueError, KeyError):
        raise InvalidArgumentError(f"{where}: bad value {value!r} for {key!r}")


class Adam:
    """Plain Adam over a fixed, sorted set of parameter names."""

    def __init__(self, lr: float, names: list[str], params: ParamStore,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.names = sorted(names)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}

    def step(self, params: ParamStore, grads: dict) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name in self.names:
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            params[name] = params[name] - self.lr * update


@dataclass
class Checkpoint:
    config: dict
    stage: int
    epoch: int
    params: ParamStore
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_step: int = 0
    rng_state: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    index = []
    payload = []
    for group, tensors in (("p", ckpt.params), ("m", ckpt.adam_m), ("v", ckpt.adam_v)):
        names = tensors.names() if isinstance(tensors, ParamStore) else sorted(tensors)
        for name in names:
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            index.append([group, name, list(arr.shape)])
            payload.append(arr.tobytes())
    meta = {
        "config": ckpt.config,
        "stage": ckpt.stage,
        "epoch": ckpt.epoch,
        "adam_step": ckpt.adam_step,
        "rng_state": ckpt.rng_state,
        "stage2_names": ckpt.params.stage2_names(),
        "index": index,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    blob = (
        CKPT_MAGIC
        + np.array([CKPT_VERSION], dtype="<u4").tobytes()
        + np.array([len(meta_bytes)], dtype="<u8").tobytes()
        + meta_bytes
        + b"".join(payload)
    )
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CKPT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != CKPT_VERSION:
        raise DataFormatError(
            f"{path}: checkpoint version {version} != supported {CKPT_VERSION}"
        )
    meta_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    if len(raw) < 16 + meta_len:
        raise DataFormatError(f"{path}: truncated checkpoint header")
    try:
        meta = json.loads(raw[16:16 + meta_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt checkpoint metadata ({exc})")
    stage2 = set(meta["stage2_names"])
    params = ParamStore()
    adam_m: dict = {}
    adam_v: dict = {}
    offset = 16 + meta_len
    for group, name, shape in meta["index"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated checkpoint payload at {name}")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
        if group == "p":
            params.add(name, arr, stage2=name in stage2)
        elif group == "m":
            adam_m[name] = arr
        else:
            adam_v[name] = arr
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(
        config=meta["config"],
        stage=int(meta["stage"]),
        epoch=int(meta["epoch"]),
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_step=int(meta["adam_step"]),
        rng_state=meta["rng_state"],
    )


def validate_params_against(cfg: TrainConfig, params: ParamStore) -> None:
    """Check a loaded parameter set against the shapes this config implies."""
    reference = model.init_params(cfg, np.random.default_rng(0))
    for name in reference.names():
        if name not in params:
            raise DataFormatError(f"checkpoint is missing tensor {name!r}")
        if params[name].shape != reference[name].shape:
            raise DataFormatError(
                f"tensor {name!r} has shape {params[name].shape}, "
                f"config implies {reference[name].shape}"
            )


def _epoch_rng(seed: int, stream: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, epoch]))


def _mean_parts(rows: list[LossBreakdown]) -> LossBreakdown:
    out = LossBreakdown()
    for name in ("mse", "vel", "mem", "align", "lip", "style", "total"):
        setattr(out, name, float(np.mean([getattr(r, name) for r in rows])))
    return out


def _check_finite(parts: LossBreakdown, params: ParamStore, ckpt_builder, diag_path):
    if np.isfinite(parts.total):
        return
    if diag_path is not None:
        save_checkpoint(ckpt_builder(), diag_path)
    where = f"; diagnostic checkpoint written to {diag_path}" if diag_path else ""
    raise NumericalFailureError(f"non-finite training loss {parts.total}{where}")


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _triplet_indices(rng, clips, by_speaker):
    """For each clip index, a (positive, negative) index pair."""
    pairs = []
    speakers = sorted(by_speaker)
    for i, pc in enumerate(clips):
        same = [j for j in by_speaker[pc.speaker_id] if j != i]
        pos = int(rng.choice(same)) if same else i
        other_speakers = [s for s in speakers if s != pc.speaker_id]
        spk = other_speakers[int(rng.integers(len(other_speakers)))]
        neg = int(rng.choice(by_speaker[spk]))
        pairs.append((pos, neg))
    return pairs


def _run_training(clips, cfg: TrainConfig, params: ParamStore, trainable: list[str],
                  clip_loss, diag_path, stage: int, needs_triplets: bool):
    opt = Adam(cfg.resolved_lr(), trainable, params)
    log: list[dict] = []
    by_speaker: dict[int, list[int]] = {}
    for i, pc in enumerate(clips):
        by_speaker.setdefault(pc.speaker_id, []).append(i)

    def ckpt_builder():
        return Checkpoint(
            config=cfg.to_dict(), stage=stage, epoch=len(log), params=params.copy(),
            adam_m=opt.m, adam_v=opt.v, adam_step=opt.step_count,
            rng_state={"scheme": "per-epoch", "seed": cfg.seed, "next_epoch": len(log)},
        )

    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        for epoch in range(cfg.epochs):
            order = _epoch_rng(cfg.seed, 1, epoch).permutation(len(clips))
            triplets = None
            if needs_triplets:
                triplets = _triplet_indices(_epoch_rng(cfg.seed, 2, epoch), clips, by_speaker)
            batch_parts: list[LossBreakdown] = []
            for batch in _batches(order, cfg.batch_size):
                grads_total: dict[str, np.ndarray] = {}
                members: list[LossBreakdown] = []
                scale = 1.0 / len(batch)
                for idx in batch:
                    idx = int(idx)
                    parts, grads = clip_loss(idx, triplets)
                    members.append(parts)
                    for name, g in grads.items():
                        if name in grads_total:
                            grads_total[name] += scale * g
                        else:
                            grads_total[name] = scale * g
                mean = _mean_parts(members)
                _check_finite(mean, params, ckpt_builder, diag_path)
                opt.step(params, grads_total)
                batch_parts.append(mean)
            epoch_mean = _mean_parts(batch_parts)
            row = {"epoch": epoch}
            row.update(epoch_mean.as_row())
            log.append(row)
    return ckpt_builder(), log


def train_stage1(corpus: Corpus, cfg: TrainConfig, diag_path=None):
    """Stage 1: learn to store and recall general facial motion."""
    cfg = replace(cfg, stage=1)
    if not corpus.train_ids:
        raise InvalidArgumentError("corpus has no training clips")
    cfg = replace(cfg, n_vertices=corpus.template.n_vertices)
    params = model.init_params(cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
    clips = [model.prepare_clip(corpus.clip_by_id(cid)) for cid in corpus.train_ids]

    def clip_loss(idx, _triplets):
        return model.stage1_clip_loss(params, cfg, clips[idx])

    return _run_training(clips, cfg, params, params.stage1_names(), clip_loss,
                         diag_path, stage=1, needs_triplets=False)


def train_stage2(corpus: Corpus, stage1_ckpt: Checkpoint, cfg: TrainConfig, diag_path=None):
    """Stage 2: freeze stage-1 tensors, train only the style pathway."""
    cfg = replace(cfg, stage=2)
    if stage1_ckpt.stage != 1:
        raise DataFormatError(
            f"stage-2 training needs a completed stage-1 checkpoint, got stage {stage1_ckpt.stage}"
        )
    if not corpus.train_ids:
        raise InvalidArgumentError("corpus has no training clips")
    cfg = replace(cfg, n_vertices=corpus.template.n_vertices)
    validate_params_against(cfg, stage1_ckpt.params)
    params = stage1_ckpt.params.copy()
    trainable = params.stage2_names()
    if not cfg.stage2_train_projections:
        trainable = [n for n in trainable if n.startswith("style_enc.")]
    clips = [model.prepare_clip(corpus.clip_by_id(cid), with_mel=True) for cid in corpus.train_ids]
    statics = [model.stage2_static(params, cfg, pc) for pc in clips]
    lip_mask = corpus.template.lip_mask

    def clip_loss(idx, triplets):
        pos_mel = neg_mel = None
        if triplets is not None:
            pos, neg = triplets[idx]
            pos_mel, neg_mel = clips[pos].mel, clips[neg].mel
        return model.stage2_clip_loss(params, cfg, clips[idx], statics[idx], lip_mask,
                                      pos_mel=pos_mel, neg_mel=neg_mel)

    needs_triplets = cfg.style_loss_weight > 0.0
    return _run_training(clips, cfg, params, trainable, clip_loss,
                         diag_path, stage=2, needs_triplets=needs_triplets)


def train_joint(corpus: Corpus, cfg: TrainConfig, diag_path=None):
    """End-to-end baseline: all parameters, combined objective, one run."""
    cfg = replace(cfg, stage=1)  # stage-1 learning rate by default
    if not corpus.train_ids:
        raise InvalidArgumentError("corpus has no training clips")
    cfg = replace(cfg, n_vertices=corpus.template.n_vertices)
    params = model.init_params(cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
    clips = [model.prepare_clip(corpus.clip_by_id(cid), with_mel=True) for cid in corpus.train_ids]
    lip_mask = corpus.template.lip_mask

    def clip_loss(idx, triplets):
        pos_mel = neg_mel = None
        if triplets is not None:
            pos, neg = triplets[idx]
            pos_mel, neg_mel = clips[pos].mel, clips[neg].mel
        return model.joint_clip_loss(params, cfg, clips[idx], lip_mask,
                                     pos_mel=pos_mel, neg_mel=neg_mel)

    ckpt, log = _run_training(clips, cfg, params, params.names(), clip_loss,
                              diag_path, stage=2, needs_triplets=cfg.style_loss_weight > 0.0)
    ckpt.config["strategy"] = "end_to_end"
    return ckpt, log


def synthesize(ckpt: Checkpoint, source: TextSource, mode: str,
               mel: np.ndarray | None = None) -> MotionSeq:
    """Synthesize motion from a text source, optionally stylized by audio."""
    cfg = ckpt.train_config()
    t_out = source.n_frames
    if mode == "general":
        out = model.general_motion(ckpt.params, cfg, source, t_out)
    elif mode == "personalized":
        if ckpt.stage < 2:
            raise InvalidModeError(
                "personalized synthesis needs a stage-2 checkpoint; this one is stage 1"
            )
        if mel is None:
            raise InvalidArgumentError("personalized synthesis needs audio (mel input)")
        out = model.personalized_motion(ckpt.params, cfg, source, t_out, mel)
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    return MotionSeq(frames=out)


def write_loss_log(rows: list[dict], path) -> None:
    lines = [",".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(",".join(
            str(row["epoch"]) if col == "epoch" else repr(float(row[col]))
            for col in LOG_COLUMNS
        ))
    Path(path).write_text("\n".join(lines) + "\n")


# -- held-out evaluation helpers (used by the acceptance suite) -----------------

def heldout_lip_error(ckpt: Checkpoint, corpus: Corpus, mode: str) -> float:
    """Macro-averaged (per speaker, then overall) lip vertex error on the
    held-out split."""
    from .audio import mel_spectrogram
    from .metrics import lve

    per_speaker: dict[int, list[float]] = {}
    for clip_id in corpus.test_ids:
        clip = corpus.clip_by_id(clip_id)
        source = TextSource(viseme_ids=np.concatenate(
            [np.full(d, v, dtype=np.int64) for v, d in clip.phonemes]))
        mel = mel_spectrogram(clip.audio).frames if mode == "personalized" else None
        hyp = synthesize(ckpt, source, mode, mel=mel)
        err = lve(clip.motion.frames, hyp.frames, corpus.template.lip_mask)
        per_speaker.setdefault(clip.speaker_id, []).append(err)
    return float(np.mean([np.mean(v) for v in per_speaker.values()]))
