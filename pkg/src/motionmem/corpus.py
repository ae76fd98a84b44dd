"""Synthetic corpus: oracle-known (audio, phonemes, speaker, motion) tuples.

A tiny 24-vertex face template stands in for a registered scan topology.
Motion is generated by an explicit keyframe oracle so tests can verify the
pipeline against construction: each of the 10 visemes owns a base keyframe
displacement, frames ease between keyframes with a raised-cosine ramp, and a
speaker's style enters as amplitude scaling on the opening (y) axis of the
lip region, an additive z offset (protrusion) during articulation, and an
easing-rate multiplier (tempo).

Audio is a per-viseme harmonic tone mixture at the speaker's pitch. Volume
tracks the amplitude style, spectral tilt tracks protrusion, and a slow
tremolo tracks tempo, so the mel front end carries both content and style.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, AudioClip, read_wav, write_wav
from .errors import DataFormatError, InvalidArgumentError

FPS = 30
N_VISEMES = 10
SILENCE = 0

MSEQ_MAGIC = b"MSEQ"
MSEQ_VERSION = 1

# per-viseme articulation targets: (opening, rounding, spread), unitless
_VISEME_SHAPE = {
    1: (1.00, 0.10, 0.20),
    2: (0.55, 0.00, 0.70),
    3: (0.25, -0.20, 1.00),
    4: (0.65, 0.80, -0.30),
    5: (0.30, 1.00, -0.60),
    6: (0.05, 0.15, 0.00),
    7: (0.20, 0.30, 0.10),
    8: (0.45, 0.05, 0.30),
    9: (0.35, 0.90, -0.50),
}

# harmonic energy split per viseme (harmonics 1..4 of the speaker pitch)
_VISEME_HARMONICS = {
    1: (0.60, 0.25, 0.10, 0.05),
    2: (0.50, 0.20, 0.20, 0.10),
    3: (0.35, 0.15, 0.30, 0.20),
    4: (0.45, 0.35, 0.12, 0.08),
    5: (0.30, 0.45, 0.15, 0.10),
    6: (0.80, 0.10, 0.06, 0.04),
    7: (0.55, 0.15, 0.20, 0.10),
    8: (0.40, 0.30, 0.20, 0.10),
    9: (0.35, 0.40, 0.15, 0.10),
}


@dataclass
class TemplateMesh:
    """Neutral-pose vertices (V, 3) and the lower-face vertex index set."""

    vertices: np.ndarray
    lip_mask: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


def default_template() -> TemplateMesh:
    """24-vertex stylized face; vertices 12..23 are the lower-face region."""
    xs = np.array([-0.03, -0.01, 0.01, 0.03])
    rows = [
        (0.08, 0.000),  # forehead
        (0.03, 0.004),  # eyes
        (0.00, 0.002),  # cheeks
        (-0.020, 0.010),  # upper lip
        (-0.035, 0.010),  # lower lip
        (-0.060, 0.000),  # jaw / chin
    ]
    verts = []
    for y, z in rows:
        for x in xs:
            verts.append((x, y, z))
    lip_mask = np.arange(12, 24)
    return TemplateMesh(vertices=np.array(verts, dtype=np.float64), lip_mask=lip_mask)


# row slices of the template used by the keyframe oracle
_UPPER_LIP = np.arange(12, 16)
_LOWER_LIP = np.arange(16, 20)
_JAW = np.arange(20, 24)
_CHEEKS = np.arange(8, 12)
_X_SIGN = np.tile(np.sign(np.array([-0.03, -0.01, 0.01, 0.03])), 6)


@dataclass
class SpeakerStyle:
    """Clip-independent articulation traits of one synthetic speaker."""

    speaker_id: int
    amplitude: float  # mouth-opening scale, in [0.5, 1.5]
    protrusion: float  # forward lip offset in meters
    tempo: float  # easing-rate multiplier, in [0.7, 1.3]
    pitch: float  # fundamental frequency of the synthetic voice, Hz

    def __post_init__(self):
        if not (0.5 <= self.amplitude <= 1.5):
            raise InvalidArgumentError(f"amplitude {self.amplitude} outside [0.5, 1.5]")
        if not (0.7 <= self.tempo <= 1.3):
            raise InvalidArgumentError(f"tempo {self.tempo} outside [0.7, 1.3]")


NEUTRAL_STYLE = SpeakerStyle(speaker_id=-1, amplitude=1.0, protrusion=0.0, tempo=1.0, pitch=200.0)


@dataclass
class MotionSeq:
    """Per-frame vertex displacements (T, V, 3) over the neutral template."""

    frames: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.frames.shape[1]


@dataclass
class Clip:
    clip_id: str
    speaker_id: int
    phonemes: list[tuple[int, int]]  # (viseme_id, duration_frames)
    motion: MotionSeq
    audio: AudioClip

    @property
    def n_frames(self) -> int:
        return self.motion.n_frames


@dataclass
class Corpus:
    template: TemplateMesh
    styles: list[SpeakerStyle]
    clips: list[Clip]
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    seed: int = 0

    def clip_by_id(self, clip_id: str) -> Clip:
        for clip in self.clips:
            if clip.clip_id == clip_id:
                return clip
        raise InvalidArgumentError(f"no clip {clip_id!r} in corpus")


def viseme_keyframe(viseme_id: int, style: SpeakerStyle, n_vertices: int = 24) -> np.ndarray:
    """Keyframe displacement (V, 3) for one viseme under one speaking style.

    Silence (id 0) is the style-free rest pose. The amplitude style scales
    the y displacement of lower-face vertices; protrusion adds to their z
    displacement during articulation.
    """
    if viseme_id not in range(N_VISEMES):
        raise InvalidArgumentError(f"unknown viseme id {viseme_id}")
    if n_vertices < 24:
        raise InvalidArgumentError("keyframe oracle is defined on the 24-vertex template")
    disp = np.zeros((n_vertices, 3))
    if viseme_id == SILENCE:
        return disp
    opening, rounding, spread = _VISEME_SHAPE[viseme_id]
    disp[_UPPER_LIP, 1] += opening * 0.003
    disp[_LOWER_LIP, 1] -= opening * 0.014
    disp[_JAW, 1] -= opening * 0.020
    disp[_CHEEKS, 1] -= opening * 0.002
    lips = np.concatenate([_UPPER_LIP, _LOWER_LIP])
    disp[lips, 2] += rounding * 0.008
    disp[_JAW, 2] += rounding * 0.002
    disp[lips, 0] -= rounding * 0.004 * _X_SIGN[lips]
    disp[lips, 0] += spread * 0.005 * _X_SIGN[lips]
    # style: scale the opening axis of the lower face, then push lips forward
    lower = np.arange(12, n_vertices)
    disp[lower, 1] *= style.amplitude
    disp[lower, 2] += style.protrusion
    return disp


def _ease(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(np.pi * u))


def oracle_motion(
    phonemes: list[tuple[int, int]], style: SpeakerStyle, n_vertices: int = 24
) -> MotionSeq:
    """Ground-truth motion for a phoneme sequence under a speaking style.

    Each segment eases from the motion state at its start toward the
    viseme's keyframe; tempo multiplies the easing rate, so tempo > 1
    articulates early and holds, tempo < 1 undershoots slow segments.
    """
    frames = []
    current = np.zeros((n_vertices, 3))
    for viseme_id, duration in phonemes:
        if duration < 1:
            raise InvalidArgumentError(f"non-positive duration {duration}")
        target = viseme_keyframe(viseme_id, style, n_vertices)
        progress = np.minimum(1.0, (np.arange(1, duration + 1) / duration) * style.tempo)
        alphas = _ease(progress)
        for a in alphas:
            frames.append((1.0 - a) * current + a * target)
        current = frames[-1]
    if not frames:
        raise InvalidArgumentError("empty phoneme sequence")
    return MotionSeq(frames=np.array(frames))


def synth_audio(phonemes: list[tuple[int, int]], style: SpeakerStyle) -> AudioClip:
    """Harmonic tone mixture carrying both content and style cues."""
    total_frames = sum(d for _, d in phonemes)
    n_samples = int(round(total_frames * SAMPLE_RATE / FPS))
    samples = np.zeros(n_samples)
    volume = 0.25 * style.amplitude
    tilt = 1.0 + 40.0 * style.protrusion
    tremolo_hz = 3.0 * style.tempo
    cursor_frames = 0
    for viseme_id, duration in phonemes:
        start = int(round(cursor_frames * SAMPLE_RATE / FPS))
        cursor_frames += duration
        stop = int(round(cursor_frames * SAMPLE_RATE / FPS))
        if viseme_id == SILENCE or stop <= start:
            continue
        weights = np.array(_VISEME_HARMONICS[viseme_id]) * tilt ** np.arange(4)
        weights /= weights.sum()
        t = np.arange(start, stop) / SAMPLE_RATE
        seg = np.zeros(stop - start)
        for h, w in enumerate(weights, start=1):
            seg += w * np.sin(2.0 * np.pi * style.pitch * h * t)
        seg *= 1.0 + 0.15 * np.sin(2.0 * np.pi * tremolo_hz * t)
        n = len(seg)
        ramp = min(80, n // 2)  # 5 ms attack/decay against clicks
        if ramp > 0:
            env = np.ones(n)
            env[:ramp] = np.linspace(0.0, 1.0, ramp)
            env[n - ramp:] = np.linspace(1.0, 0.0, ramp)
            seg *= env
        samples[start:stop] = volume * seg
    return AudioClip(samples=samples)


def _stratified(rng: np.random.Generator, n: int, lo: float, hi: float, jitter: float):
    """Evenly spaced values over [lo, hi], shuffled, with small jitter."""
    if n == 1:
        centers = np.array([(lo + hi) / 2.0])
    else:
        centers = np.linspace(lo, hi, n)
    centers = centers[rng.permutation(n)]
    vals = centers + rng.uniform(-jitter, jitter, size=n)
    return np.clip(vals, lo, hi)


def sample_styles(rng: np.random.Generator, n_speakers: int) -> list[SpeakerStyle]:
    amplitudes = _stratified(rng, n_speakers, 0.55, 1.45, 0.03)
    protrusions = _stratified(rng, n_speakers, -0.008, 0.008, 0.0005)
    tempos = _stratified(rng, n_speakers, 0.8, 1.2, 0.02)
    pitches = _stratified(rng, n_speakers, 120.0, 290.0, 4.0)
    return [
        SpeakerStyle(
            speaker_id=i,
            amplitude=float(amplitudes[i]),
            protrusion=float(protrusions[i]),
            tempo=float(tempos[i]),
            pitch=float(pitches[i]),
        )
        for i in range(n_speakers)
    ]


def _sample_phonemes(rng: np.random.Generator) -> tuple[tuple[int, int], ...]:
    n_segments = int(rng.integers(3, 7))
    seq = [(SILENCE, int(rng.integers(2, 4)))]
    prev = SILENCE
    for _ in range(n_segments):
        viseme = int(rng.integers(1, N_VISEMES))
        while viseme == prev:
            viseme = int(rng.integers(1, N_VISEMES))
        seq.append((viseme, int(rng.integers(5, 10))))
        prev = viseme
    seq.append((SILENCE, int(rng.integers(2, 4))))
    return tuple(seq)


def generate_corpus(seed: int, n_speakers: int, clips_per_speaker: int) -> Corpus:
    """Deterministically generate the full synthetic corpus with its split.

    Roughly 20% of each speaker's clips are held out; a held-out
    (speaker, phoneme sequence) pair never occurs in the training half.
    """
    if n_speakers < 2:
        raise InvalidArgumentError("need at least 2 speakers for triplet sampling")
    if clips_per_speaker < 1:
        raise InvalidArgumentError("clips_per_speaker must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    template = default_template()
    styles = sample_styles(rng, n_speakers)
    clips: list[Clip] = []
    train_ids: list[str] = []
    test_ids: list[str] = []
    n_test = max(1, round(0.2 * clips_per_speaker)) if clips_per_speaker > 1 else 0
    for style in styles:
        seen: set[tuple] = set()
        for idx in range(clips_per_speaker):
            phonemes = _sample_phonemes(rng)
            while phonemes in seen:
                phonemes = _sample_phonemes(rng)
            seen.add(phonemes)
            clip_id = f"speaker_{style.speaker_id:02d}/clip_{idx:04d}"
            clips.append(
                Clip(
                    clip_id=clip_id,
                    speaker_id=style.speaker_id,
                    phonemes=list(phonemes),
                    motion=oracle_motion(list(phonemes), style, template.n_vertices),
                    audio=synth_audio(list(phonemes), style),
                )
            )
            if idx >= clips_per_speaker - n_test:
                test_ids.append(clip_id)
            else:
                train_ids.append(clip_id)
    return Corpus(
        template=template,
        styles=styles,
        clips=clips,
        train_ids=train_ids,
        test_ids=test_ids,
        seed=seed,
    )


# -- on-disk formats ---------------------------------------------------------

def write_mseq(path, motion: MotionSeq) -> None:
    t, v, _ = motion.frames.shape
    header = MSEQ_MAGIC + np.array([MSEQ_VERSION, t, v], dtype="<u4").tobytes()
    payload = motion.frames.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_mseq(path) -> MotionSeq:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MSEQ_MAGIC:
        raise DataFormatError(f"{path}: not an MSEQ file")
    version, t, v = np.frombuffer(raw[4:16], dtype="<u4")
    if version != MSEQ_VERSION:
        raise DataFormatError(f"{path}: unsupported MSEQ version {version}")
    expected = 16 + 4 * t * v * 3
    if len(raw) != expected:
        raise DataFormatError(f"{path}: truncated MSEQ ({len(raw)} bytes, need {expected})")
    frames = np.frombuffer(raw[16:], dtype="<f4").astype(np.float64).reshape(t, v, 3)
    return MotionSeq(frames=frames)


def write_phn(path, phonemes: list[tuple[int, int]]) -> None:
    with open(path, "w") as fh:
        for viseme_id, duration in phonemes:
            fh.write(f"{viseme_id} {duration}\n")


def read_phn(path) -> list[tuple[int, int]]:
    phonemes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 'viseme_id duration_frames'")
        viseme_id, duration = int(parts[0]), int(parts[1])
        if viseme_id not in range(N_VISEMES) or duration < 1:
            raise DataFormatError(f"{path}:{lineno}: bad viseme/duration {line!r}")
        phonemes.append((viseme_id, duration))
    if not phonemes:
        raise DataFormatError(f"{path}: no phoneme entries")
    return phonemes


def save_corpus(corpus: Corpus, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = {
        "vertices": corpus.template.vertices.tolist(),
        "lip_mask": corpus.template.lip_mask.tolist(),
    }
    (out / "template.json").write_text(json.dumps(template, sort_keys=True, indent=1))
    (out / "lip_mask.txt").write_text(
        "\n".join(str(i) for i in corpus.template.lip_mask) + "\n"
    )
    speakers = [
        {
            "speaker_id": s.speaker_id,
            "amplitude": s.amplitude,
            "protrusion": s.protrusion,
            "tempo": s.tempo,
            "pitch": s.pitch,
        }
        for s in corpus.styles
    ]
    (out / "speakers.json").write_text(json.dumps(speakers, sort_keys=True, indent=1))
    for clip in corpus.clips:
        clip_path = out / clip.clip_id
        clip_path.parent.mkdir(exist_ok=True)
        write_wav(clip_path.with_suffix(".wav"), clip.audio)
        write_mseq(clip_path.with_suffix(".mseq"), clip.motion)
        write_phn(clip_path.with_suffix(".phn"), clip.phonemes)
    manifest = {
        "seed": corpus.seed,
        "n_speakers": len(corpus.styles),
        "clips_per_speaker": len(corpus.clips) // max(1, len(corpus.styles)),
        "total_clips": len(corpus.clips),
        "fps": FPS,
        "split": {"train": corpus.train_ids, "test": corpus.test_ids},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def load_corpus(corpus_dir) -> Corpus:
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataFormatError(f"{root}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    template_raw = json.loads((root / "template.json").read_text())
    template = TemplateMesh(
        vertices=np.array(template_raw["vertices"], dtype=np.float64),
        lip_mask=np.array(template_raw["lip_mask"], dtype=np.int64),
    )
    styles = [
        SpeakerStyle(**rec) for rec in json.loads((root / "speakers.json").read_text())
    ]
    clips = []
    for clip_id in manifest["split"]["train"] + manifest["split"]["test"]:
        base = root / clip_id
        clips.append(
            Clip(
                clip_id=clip_id,
                speaker_id=int(clip_id.split("/")[0].split("_")[1]),
                phonemes=read_phn(base.with_suffix(".phn")),
                motion=read_mseq(base.with_suffix(".mseq")),
                audio=read_wav(base.with_suffix(".wav")),
            )
        )
    return Corpus(
        template=template,
        styles=styles,
        clips=clips,
        train_ids=list(manifest["split"]["train"]),
        test_ids=list(manifest["split"]["test"]),
        seed=int(manifest["seed"]),
    )
