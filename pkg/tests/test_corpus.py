import numpy as np
import pytest

from motionmem import corpus
from motionmem.errors import DataFormatError, InvalidArgumentError

NEUTRAL = corpus.SpeakerStyle(speaker_id=0, amplitude=1.0, protrusion=0.0,
                              tempo=1.0, pitch=200.0)


def small_corpus(seed=3):
    return corpus.generate_corpus(seed=seed, n_speakers=2, clips_per_speaker=5)


class TestOracleMotion:
    def test_neutral_style_keeps_base_keyframes(self):
        for vis in range(1, corpus.N_VISEMES):
            key = corpus.viseme_keyframe(vis, NEUTRAL)
            amp2 = corpus.SpeakerStyle(0, amplitude=1.0, protrusion=0.0,
                                       tempo=1.0, pitch=150.0)
            np.testing.assert_array_equal(key, corpus.viseme_keyframe(vis, amp2))

    def test_silence_is_zero_displacement(self):
        seq = corpus.oracle_motion([(0, 6)], NEUTRAL)
        assert np.all(seq.frames == 0.0)

    def test_protrusion_adds_exactly_p_on_lip_z(self):
        p = 0.004
        proto = corpus.SpeakerStyle(0, amplitude=1.0, protrusion=p, tempo=1.0, pitch=200.0)
        mask = corpus.default_template().lip_mask
        for vis in range(1, corpus.N_VISEMES):
            base = corpus.viseme_keyframe(vis, NEUTRAL)
            styled = corpus.viseme_keyframe(vis, proto)
            np.testing.assert_allclose(styled[mask, 2] - base[mask, 2], p, atol=1e-15)
            np.testing.assert_array_equal(styled[:12], base[:12])

    def test_amplitude_scales_jaw_opening_exactly(self):
        s1 = corpus.SpeakerStyle(0, amplitude=0.6, protrusion=0.0, tempo=1.0, pitch=200.0)
        s2 = corpus.SpeakerStyle(1, amplitude=1.2, protrusion=0.0, tempo=1.0, pitch=150.0)
        phonemes = [(1, 5), (4, 6), (2, 4)]
        m1 = corpus.oracle_motion(phonemes, s1).frames
        m2 = corpus.oracle_motion(phonemes, s2).frames
        jaw = np.arange(20, 24)
        np.testing.assert_allclose(m2[:, jaw, 1], 2.0 * m1[:, jaw, 1], atol=1e-15)

    def test_reversed_phonemes_reverse_keyframes(self):
        phonemes = [(2, 5), (7, 4), (5, 6)]
        fwd = corpus.oracle_motion(phonemes, NEUTRAL).frames
        rev = corpus.oracle_motion(list(reversed(phonemes)), NEUTRAL).frames
        # at tempo 1 each segment's last frame hits its viseme keyframe
        ends_fwd = np.cumsum([d for _, d in phonemes]) - 1
        ends_rev = np.cumsum([d for _, d in reversed(phonemes)]) - 1
        for k, (vis, _) in enumerate(phonemes):
            np.testing.assert_allclose(
                fwd[ends_fwd[k]], corpus.viseme_keyframe(vis, NEUTRAL), atol=1e-12)
            np.testing.assert_allclose(
                rev[ends_rev[len(phonemes) - 1 - k]],
                corpus.viseme_keyframe(vis, NEUTRAL), atol=1e-12)

    def test_unknown_viseme_rejected(self):
        with pytest.raises(InvalidArgumentError):
            corpus.oracle_motion([(12, 4)], NEUTRAL)

    def test_displacement_bound(self):
        data = small_corpus()
        for clip in data.clips:
            assert np.max(np.abs(clip.motion.frames)) <= 0.1


class TestGenerateCorpus:
    def test_deterministic_under_seed(self):
        a = corpus.generate_corpus(seed=9, n_speakers=2, clips_per_speaker=4)
        b = corpus.generate_corpus(seed=9, n_speakers=2, clips_per_speaker=4)
        assert a.train_ids == b.train_ids and a.test_ids == b.test_ids
        for ca, cb in zip(a.clips, b.clips):
            np.testing.assert_array_equal(ca.motion.frames, cb.motion.frames)
            np.testing.assert_array_equal(ca.audio.samples, cb.audio.samples)
            assert ca.phonemes == cb.phonemes

    def test_single_speaker_rejected(self):
        with pytest.raises(InvalidArgumentError, match="triplet"):
            corpus.generate_corpus(seed=1, n_speakers=1, clips_per_speaker=5)

    def test_counts_and_split(self):
        data = corpus.generate_corpus(seed=7, n_speakers=4, clips_per_speaker=50)
        assert len(data.clips) == 200
        assert len(data.train_ids) + len(data.test_ids) == 200
        assert len(data.test_ids) == 40  # 20% of each speaker's clips

    def test_split_shares_no_speaker_sequence_pairs(self):
        data = small_corpus()
        train_pairs = {(c.speaker_id, tuple(c.phonemes))
                       for c in data.clips if c.clip_id in set(data.train_ids)}
        for clip in data.clips:
            if clip.clip_id in set(data.test_ids):
                assert (clip.speaker_id, tuple(clip.phonemes)) not in train_pairs

    def test_audio_length_matches_frames(self):
        data = small_corpus()
        for clip in data.clips:
            expected = clip.n_frames / corpus.FPS * 16000
            assert abs(len(clip.audio.samples) - expected) <= 160

    def test_clip_frames_match_phoneme_durations(self):
        data = small_corpus()
        for clip in data.clips:
            assert clip.n_frames == sum(d for _, d in clip.phonemes)

    def test_style_separability_on_lips(self):
        # two speakers, same phonemes: lip trajectories must differ
        data = small_corpus()
        phonemes = [(3, 6), (8, 5)]
        mask = data.template.lip_mask
        m0 = corpus.oracle_motion(phonemes, data.styles[0]).frames[:, mask]
        m1 = corpus.oracle_motion(phonemes, data.styles[1]).frames[:, mask]
        assert np.max(np.abs(m0 - m1)) > 1e-4

    def test_audio_carries_style(self):
        # same phonemes, different speakers: waveforms differ
        phonemes = [(5, 8)]
        data = small_corpus()
        a0 = corpus.synth_audio(phonemes, data.styles[0]).samples
        a1 = corpus.synth_audio(phonemes, data.styles[1]).samples
        assert np.max(np.abs(a0 - a1)) > 1e-3


class TestDiskFormats:
    def test_mseq_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        motion = corpus.MotionSeq(frames=rng.normal(0, 0.01, size=(7, 24, 3)))
        path = tmp_path / "clip.mseq"
        corpus.write_mseq(path, motion)
        back = corpus.read_mseq(path)
        np.testing.assert_array_equal(back.frames,
                                      motion.frames.astype("<f4").astype(np.float64))

    def test_mseq_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mseq"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(DataFormatError):
            corpus.read_mseq(path)

    def test_mseq_truncated(self, tmp_path):
        rng = np.random.default_rng(6)
        motion = corpus.MotionSeq(frames=rng.normal(0, 0.01, size=(7, 24, 3)))
        path = tmp_path / "trunc.mseq"
        corpus.write_mseq(path, motion)
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(DataFormatError, match="truncated"):
            corpus.read_mseq(path)

    def test_phn_roundtrip(self, tmp_path):
        phonemes = [(0, 3), (4, 7), (1, 5)]
        path = tmp_path / "clip.phn"
        corpus.write_phn(path, phonemes)
        assert corpus.read_phn(path) == phonemes

    def test_phn_rejects_bad_lines(self, tmp_path):
        path = tmp_path / "bad.phn"
        path.write_text("3 4\nnot a line\n")
        with pytest.raises(DataFormatError):
            corpus.read_phn(path)

    def test_corpus_save_load_roundtrip(self, tmp_path):
        data = small_corpus()
        corpus.save_corpus(data, tmp_path / "corpus")
        back = corpus.load_corpus(tmp_path / "corpus")
        assert back.train_ids == data.train_ids
        assert back.test_ids == data.test_ids
        assert len(back.clips) == len(data.clips)
        np.testing.assert_array_equal(back.template.vertices, data.template.vertices)
        np.testing.assert_array_equal(back.template.lip_mask, data.template.lip_mask)
        orig = data.clip_by_id(data.train_ids[0])
        loaded = back.clip_by_id(data.train_ids[0])
        assert loaded.phonemes == orig.phonemes
        np.testing.assert_allclose(loaded.motion.frames, orig.motion.frames, atol=1e-7)
        np.testing.assert_allclose(loaded.audio.samples, orig.audio.samples,
                                   atol=1.0 / 32768)

    def test_style_ranges_validated(self):
        with pytest.raises(InvalidArgumentError):
            corpus.SpeakerStyle(0, amplitude=2.0, protrusion=0.0, tempo=1.0, pitch=100.0)
        with pytest.raises(InvalidArgumentError):
            corpus.SpeakerStyle(0, amplitude=1.0, protrusion=0.0, tempo=0.5, pitch=100.0)
