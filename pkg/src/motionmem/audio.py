"""Mono 16 kHz PCM audio IO and the log-mel front end for the style encoder.

STFT parameters (25 ms periodic Hann window, 10 ms hop, 512-point FFT,
80 triangular mel filters over 0-8000 Hz, natural log with a 1e-10 floor)
are the usual speech defaults and are frozen here so checkpoints stay
reproducible. Mel energies come from the squared FFT magnitude, so doubling
the waveform amplitude raises every unfloored log energy by ln 4.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UnsupportedFormatError

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    """Mono waveform, samples in [-1, 1], fixed 16 kHz rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file; must be 16-bit PCM, mono, 16 kHz."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})")
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    ints = np.frombuffer(frames, dtype="<i2")
    return AudioClip(samples=ints.astype(np.float64) / 32768.0)


def write_wav(path, clip: AudioClip) -> None:
    """Write an AudioClip as 16-bit mono PCM. Round-trips read_wav exactly."""
    scaled = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(scaled.tobytes())


def hann_window(length: int) -> np.ndarray:
    # periodic form, the common STFT convention
    k = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / length)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS, n_fft: int = N_FFT, rate: int = SAMPLE_RATE
) -> tuple[np.ndarray, np.ndarray]:
    """Triangular, peak-1 mel filters. Returns (filters, center_freqs_hz).

    ``filters`` has shape (n_mels, n_fft//2 + 1).
    """
    edges_mel = np.linspace(_hz_to_mel(FMIN), _hz_to_mel(FMAX), n_mels + 2)
    edges_hz = _mel_to_hz(edges_mel)
    fft_freqs = np.arange(n_fft // 2 + 1) * (rate / n_fft)
    filters = np.zeros((n_mels, len(fft_freqs)))
    for m in range(n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        filters[m] = np.maximum(0.0, np.minimum(up, down))
    return filters, edges_hz[1:-1]


@dataclass
class MelGram:
    """Log-mel energies, shape (T_mel, 80)."""

    frames: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def frame_count(n_samples: int) -> int:
    if n_samples < WIN_LENGTH:
        raise InvalidArgumentError(
            f"need at least {WIN_LENGTH} samples for one window, got {n_samples}"
        )
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def mel_spectrogram(clip: AudioClip) -> MelGram:
    """Compute the (T_mel, 80) log-mel spectrogram of a clip."""
    x = np.asarray(clip.samples, dtype=np.float64)
    t_mel = frame_count(len(x))
    window = hann_window(WIN_LENGTH)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(t_mel)[:, None]
    frames = x[idx] * window[None, :]
    spec = np.fft.rfft(frames, n=N_FFT, axis=1)
    power = np.abs(spec) ** 2
    filters, _ = mel_filterbank()
    mel = power @ filters.T
    return MelGram(frames=np.log(np.maximum(mel, LOG_FLOOR)))


def export_melgram_csv(mel: MelGram, path) -> None:
    """Write a MelGram as CSV with header ``frame,bin0..bin79``."""
    header = "frame," + ",".join(f"bin{b}" for b in range(mel.frames.shape[1]))
    lines = [header]
    for t, row in enumerate(mel.frames):
        lines.append(str(t) + "," + ",".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
