import numpy as np
import pytest

from motionmem import audio
from motionmem.errors import InvalidArgumentError, UnsupportedFormatError


def tone(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * audio.SAMPLE_RATE)) / audio.SAMPLE_RATE
    return audio.AudioClip(samples=amp * np.sin(2 * np.pi * freq * t))


class TestWavIO:
    def test_silence_roundtrip(self, tmp_path):
        clip = audio.AudioClip(samples=np.zeros(16000))
        path = tmp_path / "silence.wav"
        audio.write_wav(path, clip)
        back = audio.read_wav(path)
        assert len(back.samples) == 16000
        assert np.all(back.samples == 0.0)

    def test_full_scale_square_wave(self, tmp_path):
        clip = audio.AudioClip(samples=np.full(400, 32767 / 32768))
        path = tmp_path / "square.wav"
        audio.write_wav(path, clip)
        back = audio.read_wav(path)
        assert np.all(back.samples == 32767 / 32768)

    def test_bit_identical_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        quantized = rng.integers(-32768, 32768, size=5000) / 32768.0
        path = tmp_path / "noise.wav"
        audio.write_wav(path, audio.AudioClip(samples=quantized))
        back = audio.read_wav(path)
        np.testing.assert_array_equal(back.samples, quantized)

    def test_wrong_rate_rejected(self, tmp_path):
        import wave
        path = tmp_path / "wrong.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(44100)
            wf.writeframes(b"\x00\x00" * 100)
        with pytest.raises(UnsupportedFormatError, match="44100"):
            audio.read_wav(path)

    def test_stereo_rejected(self, tmp_path):
        import wave
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(b"\x00\x00\x00\x00" * 100)
        with pytest.raises(UnsupportedFormatError, match="mono"):
            audio.read_wav(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "notwav.wav"
        path.write_bytes(b"this is not RIFF data")
        with pytest.raises(UnsupportedFormatError):
            audio.read_wav(path)


class TestMelSpectrogram:
    def test_silence_hits_log_floor(self):
        mel = audio.mel_spectrogram(audio.AudioClip(samples=np.zeros(16000)))
        assert np.all(mel.frames == np.log(audio.LOG_FLOOR))

    def test_frame_count_formula(self):
        mel = audio.mel_spectrogram(tone(440, seconds=1.0))
        assert mel.n_frames == 1 + (16000 - 400) // 160 == 98
        assert mel.frames.shape == (98, 80)

    def test_tone_argmax_matches_filter_centers(self):
        mel = audio.mel_spectrogram(tone(440, seconds=0.5))
        _, centers = audio.mel_filterbank()
        expected_bin = int(np.argmin(np.abs(centers - 440.0)))
        argmax = np.argmax(mel.frames, axis=1)
        # interior frames; window edges can smear
        assert np.all(argmax[2:-2] == expected_bin)

    def test_too_short_rejected(self):
        with pytest.raises(InvalidArgumentError):
            audio.mel_spectrogram(audio.AudioClip(samples=np.zeros(399)))

    def test_hop_shift_moves_rows(self):
        rng = np.random.default_rng(4)
        sig = rng.uniform(-0.5, 0.5, size=8000)
        shifted = np.concatenate([np.zeros(audio.HOP_LENGTH), sig])
        a = audio.mel_spectrogram(audio.AudioClip(samples=sig)).frames
        b = audio.mel_spectrogram(audio.AudioClip(samples=shifted)).frames
        # row i of the original aligns with row i+1 of the shifted signal
        np.testing.assert_allclose(a[1:20], b[2:21], atol=1e-6)

    def test_amplitude_doubling_adds_ln4(self):
        base = tone(600, seconds=0.3, amp=0.3)
        loud = audio.AudioClip(samples=2.0 * base.samples)
        a = audio.mel_spectrogram(base).frames
        b = audio.mel_spectrogram(loud).frames
        unfloored = a > np.log(audio.LOG_FLOOR) + 1.5
        assert unfloored.any()
        np.testing.assert_allclose(b[unfloored] - a[unfloored], np.log(4.0), atol=1e-6)


class TestMelExport:
    def test_csv_header_and_rows(self, tmp_path):
        mel = audio.mel_spectrogram(tone(300, seconds=0.2))
        path = tmp_path / "mel.csv"
        audio.export_melgram_csv(mel, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "frame," + ",".join(f"bin{i}" for i in range(80))
        assert len(lines) == mel.n_frames + 1
        first = lines[1].split(",")
        assert first[0] == "0"
        assert float(first[1]) == pytest.approx(mel.frames[0, 0])
