"""Command-line surface: corpus generation, training, synthesis, evaluation,
gradient checking, memory inspection, and loss-curve plotting.

Exit codes: 0 success, 1 usage problem, 2 data/format problem, 3 numerical
failure. Artifacts are written atomically (temp file + rename) so a killed
command never leaves a half-written file behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from . import checks, corpus as corpus_mod, metrics as metrics_mod, training
from .audio import mel_spectrogram, read_wav
from .encoders import TextSource, read_txtf
from .errors import (
    CapacityError,
    DataFormatError,
    InvalidArgumentError,
    InvalidModeError,
    NumericalFailureError,
    UnsupportedFormatError,
)
from .memory import MemoryBank, value_address_forward
from .model import stage2_static  # noqa: F401  (re-exported for scripting)
from .numerics import softmax_rows

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionmem",
                     description="Memory-based speech-driven facial motion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--clips", type=int, default=50, help="clips per speaker")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="stage-1 checkpoint (required for stage 2)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field")

    p = sub.add_parser("synth", help="synthesize motion from a clip input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help=".wav, .phn, or .txtf input")
    p.add_argument("--mode", choices=("general", "personalized"), default="general")
    p.add_argument("--audio", help="style audio (defaults to the input's sibling .wav)")
    p.add_argument("--out", required=True, help="output .mseq path")

    p = sub.add_parser("eval", help="compare reference and hypothesis clips")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--lip-mask", required=True)
    p.add_argument("--out", required=True, help="report base path (.json/.csv added)")

    p = sub.add_parser("gradcheck", help="central-difference gradient checks")
    p.add_argument("--which", default="all")

    p = sub.add_parser("inspect-memory", help="dump slots and per-frame addresses")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True, help="clip path without extension")
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", help="render a loss log as an SVG line chart")
    p.add_argument("--loss-csv", required=True)
    p.add_argument("--out", required=True)
    return parser


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists and is not empty (use --force)", file=sys.stderr)
        return 2
    data = corpus_mod.generate_corpus(args.seed, args.speakers, args.clips)
    corpus_mod.save_corpus(data, out)
    print(f"wrote {len(data.clips)} clips for {args.speakers} speakers to {out}")
    print(f"split: {len(data.train_ids)} train / {len(data.test_ids)} held out")
    return 0


def _load_train_config(args) -> training.TrainConfig:
    values: dict = {}
    if args.config:
        values.update(training.parse_config_file(args.config))
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        fields = {f.name: f.type for f in dataclasses.fields(training.TrainConfig)}
        if key not in fields:
            raise UsageError(f"unknown config field {key!r}")
        values[key] = training._parse_value(key, val, fields[key], "--set")
    for flag in ("epochs", "lr", "seed", "batch_size"):
        flag_val = getattr(args, flag)
        if flag_val is not None:
            values[flag] = flag_val
    values["stage"] = args.stage
    return training.TrainConfig.from_dict(values)


def _config_snapshot(cfg: training.TrainConfig) -> str:
    lines = [f"{name} = {value}" for name, value in sorted(cfg.to_dict().items())]
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    if args.stage == 2 and not args.init:
        raise UsageError("stage 2 requires --init with a stage-1 checkpoint")
    cfg = _load_train_config(args)
    data = corpus_mod.load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    diag = out / "diagnostic.mtck"
    if args.stage == 1:
        ckpt, log = training.train_stage1(data, cfg, diag_path=diag)
    else:
        init = training.load_checkpoint(args.init)
        ckpt, log = training.train_stage2(data, init, cfg, diag_path=diag)
    tmp = out / "checkpoint.mtck.tmp"
    training.save_checkpoint(ckpt, tmp)
    os.replace(tmp, out / "checkpoint.mtck")
    rows_text = _loss_log_text(log)
    atomic_write_text(out / "loss_log.csv", rows_text)
    atomic_write_text(out / "config_snapshot.cfg", _config_snapshot(cfg))
    print(f"stage {args.stage} finished: {len(log)} epochs, "
          f"final total {log[-1]['total']:.6g}")
    print(f"checkpoint: {out / 'checkpoint.mtck'}")
    return 0


def _loss_log_text(log: list[dict]) -> str:
    lines = [",".join(training.LOG_COLUMNS)]
    for row in log:
        lines.append(",".join(
            str(row["epoch"]) if col == "epoch" else repr(float(row[col]))
            for col in training.LOG_COLUMNS
        ))
    return "\n".join(lines) + "\n"


def _resolve_synth_inputs(args):
    """Returns (text source, mel or None). Content comes from .phn/.txtf;
    style audio from the input wav, --audio, or the sibling .wav."""
    path = Path(args.input)
    suffix = path.suffix.lower()
    audio_path = Path(args.audio) if args.audio else None
    if suffix == ".wav":
        phn = path.with_suffix(".phn")
        if not phn.exists():
            raise DataFormatError(
                f"{path}: no sibling {phn.name}; the synthetic text encoder needs "
                "a phoneme file (or pass a .txtf input)"
            )
        source = TextSource(viseme_ids=_ids_from_phn(phn))
        audio_path = audio_path or path
    elif suffix == ".phn":
        source = TextSource(viseme_ids=_ids_from_phn(path))
        if audio_path is None and path.with_suffix(".wav").exists():
            audio_path = path.with_suffix(".wav")
    elif suffix == ".txtf":
        source = TextSource(features=read_txtf(path))
    else:
        raise UsageError(f"unsupported input type {suffix!r}; expected .wav, .phn, or .txtf")
    mel = None
    if args.mode == "personalized":
        if audio_path is None:
            raise UsageError("personalized mode needs audio: give a .wav input or --audio")
        mel = mel_spectrogram(read_wav(audio_path)).frames
    return source, mel


def _ids_from_phn(path) -> np.ndarray:
    phonemes = corpus_mod.read_phn(path)
    return np.concatenate([np.full(d, v, dtype=np.int64) for v, d in phonemes])


def cmd_synth(args) -> int:
    ckpt = training.load_checkpoint(args.ckpt)
    source, mel = _resolve_synth_inputs(args)
    motion = training.synthesize(ckpt, source, args.mode, mel=mel)
    tmp = Path(args.out).with_name(Path(args.out).name + ".tmp")
    corpus_mod.write_mseq(tmp, motion)
    os.replace(tmp, args.out)
    t, v, _ = motion.frames.shape
    print(f"T={t} V={v} mode={args.mode}")
    return 0


def cmd_eval(args) -> int:
    ref_dir, hyp_dir = Path(args.ref), Path(args.hyp)
    ref_ids = {str(p.relative_to(ref_dir))[:-5] for p in ref_dir.rglob("*.mseq")}
    hyp_ids = {str(p.relative_to(hyp_dir))[:-5] for p in hyp_dir.rglob("*.mseq")}
    if ref_ids != hyp_ids:
        missing = sorted(ref_ids ^ hyp_ids)
        print("error: clip ids differ between --ref and --hyp:", file=sys.stderr)
        for cid in missing:
            side = "hyp" if cid in ref_ids else "ref"
            print(f"  missing from {side}: {cid}", file=sys.stderr)
        return 2
    if not ref_ids:
        print("error: no .mseq clips found", file=sys.stderr)
        return 2
    lip_mask = metrics_mod.read_lip_mask(args.lip_mask)
    pairs = []
    for cid in sorted(ref_ids):
        ref = corpus_mod.read_mseq(ref_dir / f"{cid}.mseq").frames
        hyp = corpus_mod.read_mseq(hyp_dir / f"{cid}.mseq").frames
        pairs.append((cid, ref, hyp))
    report = metrics_mod.evaluate_clips(pairs, lip_mask)
    base = Path(args.out)
    atomic_write_text(base.with_suffix(".json"), report.to_json() + "\n")
    atomic_write_text(base.with_suffix(".csv"), report.to_csv())
    print(f"fve={report.fve!r} lve={report.lve!r} "
          f"ldtw={report.ldtw!r} lip_max={report.lip_max!r}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = checks.run_suite(args.which)
    worst = 0.0
    for rep in reports:
        status = "ok" if rep.passed(GRADCHECK_TOL) else "FAIL"
        print(f"{status:4s} {rep.op_name:28s} max rel err {rep.max_rel_error:.3e}")
        worst = max(worst, rep.max_rel_error)
    print(f"worst relative error: {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return 0 if worst < GRADCHECK_TOL else 3


def cmd_inspect_memory(args) -> int:
    ckpt = training.load_checkpoint(args.ckpt)
    cfg = ckpt.train_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    slots = ckpt.params["memory.slots"]
    atomic_write_text(out / "slots.json", json.dumps(
        {"kappa": cfg.kappa, "n_slots": int(slots.shape[0]),
         "channels": int(slots.shape[1]), "slots": slots.tolist()},
        sort_keys=True) + "\n")

    clip_base = Path(args.clip)
    if clip_base.suffix:
        clip_base = clip_base.with_suffix("")
    wrote = []
    phn = clip_base.with_suffix(".phn")
    if phn.exists():
        source = TextSource(viseme_ids=_ids_from_phn(phn))
        from .encoders import text_encode
        f_txt, _ = text_encode(source, source.n_frames, ckpt.params)
        key = softmax_rows(f_txt)
        atomic_write_text(out / "key_addresses.csv", _address_csv(key))
        wrote.append("key_addresses.csv")
    mseq = clip_base.with_suffix(".mseq")
    if mseq.exists():
        motion = corpus_mod.read_mseq(mseq).frames
        flat = motion.reshape(motion.shape[0], -1)
        feats = flat @ ckpt.params["motion_enc.w"] + ckpt.params["motion_enc.b"]
        bank = MemoryBank(slots=slots, kappa=cfg.kappa)
        val, _ = value_address_forward(feats, bank)
        atomic_write_text(out / "value_addresses.csv", _address_csv(val))
        wrote.append("value_addresses.csv")
    if not wrote:
        print(f"error: neither {phn} nor {mseq} exists", file=sys.stderr)
        return 2
    print(f"wrote slots.json, {', '.join(wrote)} to {out}")
    return 0


def _address_csv(addresses: np.ndarray) -> str:
    n = addresses.shape[1]
    lines = ["frame," + ",".join(f"slot{i}" for i in range(n))]
    for t, row in enumerate(addresses):
        lines.append(str(t) + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f"]


def cmd_plot(args) -> int:
    rows = Path(args.loss_csv).read_text().strip().splitlines()
    if len(rows) < 2:
        print("error: loss CSV needs a header and at least one row", file=sys.stderr)
        return 2
    header = rows[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in rows[1:]])
    atomic_write_text(args.out, _render_svg(header, data))
    print(f"wrote {args.out} ({len(header) - 1} series, {len(data)} points each)")
    return 0


def _render_svg(header: list[str], data: np.ndarray) -> str:
    width, height, margin = 800, 440, 50
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height),
                  fill="white")
    ET.SubElement(svg, "line", x1=str(margin), y1=str(height - margin),
                  x2=str(width - margin), y2=str(height - margin), stroke="black")
    ET.SubElement(svg, "line", x1=str(margin), y1=str(margin),
                  x2=str(margin), y2=str(height - margin), stroke="black")
    x = data[:, 0]
    x_span = (x.max() - x.min()) or 1.0
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    for col in range(1, data.shape[1]):
        y = data[:, col]
        y_span = (y.max() - y.min()) or 1.0
        points = " ".join(
            f"{margin + (xv - x.min()) / x_span * plot_w:.2f},"
            f"{height - margin - (yv - y.min()) / y_span * plot_h:.2f}"
            for xv, yv in zip(x, y)
        )
        color = _PALETTE[(col - 1) % len(_PALETTE)]
        ET.SubElement(svg, "polyline", points=points, fill="none",
                      stroke=color, **{"stroke-width": "1.5"})
        label = ET.SubElement(svg, "text", x=str(width - margin + 4),
                              y=str(margin + 14 * col), fill=color,
                              **{"font-size": "11"})
        label.text = header[col]
    title = ET.SubElement(svg, "text", x=str(margin), y=str(margin - 10),
                          **{"font-size": "13"})
    title.text = f"{header[0]} vs " + ", ".join(header[1:])
    return ET.tostring(svg, encoding="unicode")


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect-memory": cmd_inspect_memory,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (InvalidArgumentError, InvalidModeError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UnsupportedFormatError, DataFormatError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
