import numpy as np
import pytest

from motionmem import encoders, model
from motionmem.encoders import TextSource
from motionmem.errors import InvalidArgumentError, UnsupportedFormatError
from motionmem.layers import ParamStore
from motionmem.numerics import linear_interp_time
from motionmem.training import TrainConfig


def toy_params(seed=0, **kw):
    cfg = TrainConfig(n_slots=3, channels=6, d_txt=5, n_vertices=4, heads=2,
                      ff_width=8, style_width=8, style_groups=2,
                      motion_input_scale=1.0, slot_init_gain=1.0, **kw)
    return cfg, model.init_params(cfg, np.random.default_rng(seed), mel_bins=8)


class TestMotionEncode:
    def test_zero_motion_zero_bias_gives_zero(self):
        cfg, params = toy_params()
        params["motion_enc.b"] = np.zeros(cfg.channels)
        feats, _ = encoders.motion_encode(np.zeros((3, 12)), params)
        assert np.all(feats == 0.0)

    def test_linearity_in_input(self):
        cfg, params = toy_params()
        params["motion_enc.b"] = np.zeros(cfg.channels)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 12))
        f1, _ = encoders.motion_encode(x, params)
        f2, _ = encoders.motion_encode(2.5 * x, params)
        np.testing.assert_allclose(f2, 2.5 * f1, atol=1e-12)

    def test_hand_set_weights_matmul_oracle(self):
        # 1 frame, V=2 (6 inputs), c=2: check against a direct matrix product
        params = ParamStore()
        w = np.arange(12, dtype=np.float64).reshape(6, 2)
        b = np.array([0.5, -1.0])
        params.add("motion_enc.w", w)
        params.add("motion_enc.b", b)
        x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]])
        feats, _ = encoders.motion_encode(x, params)
        np.testing.assert_array_equal(feats, x @ w + b)

    def test_shape_mismatch_rejected(self):
        _, params = toy_params()
        with pytest.raises(InvalidArgumentError):
            encoders.motion_encode(np.zeros((3, 7)), params)


class TestTextEncode:
    def test_constant_viseme_gives_identical_rows(self):
        _, params = toy_params()
        f_txt, _ = encoders.text_encode(
            TextSource(viseme_ids=np.full(6, 3, dtype=np.int64)), 6, params)
        np.testing.assert_allclose(f_txt, np.tile(f_txt[0], (6, 1)), atol=1e-12)

    def test_no_resample_when_lengths_match(self):
        _, params = toy_params()
        ids = np.array([1, 2, 3], dtype=np.int64)
        f_txt, _ = encoders.text_encode(TextSource(viseme_ids=ids), 3, params)
        expected = params["text_enc.emb"][ids] @ params["text_enc.proj.w"] \
            + params["text_enc.proj.b"]
        np.testing.assert_array_equal(f_txt, expected)

    def test_upsampling_matches_interp_oracle(self):
        _, params = toy_params()
        ids = np.array([2, 7], dtype=np.int64)
        f_txt, _ = encoders.text_encode(TextSource(viseme_ids=ids), 4, params)
        emb = params["text_enc.emb"][ids]
        expected = linear_interp_time(emb, 4) @ params["text_enc.proj.w"] \
            + params["text_enc.proj.b"]
        np.testing.assert_allclose(f_txt, expected, atol=1e-12)

    def test_output_rows_equal_t_out(self):
        _, params = toy_params()
        rng = np.random.default_rng(5)
        for _ in range(20):
            n_src = int(rng.integers(1, 9))
            t_out = int(rng.integers(1, 15))
            ids = rng.integers(0, 10, size=n_src).astype(np.int64)
            f_txt, _ = encoders.text_encode(TextSource(viseme_ids=ids), t_out, params)
            assert f_txt.shape[0] == t_out

    def test_precomputed_feature_path(self, tmp_path):
        cfg, params = toy_params()
        rng = np.random.default_rng(9)
        feats = rng.normal(size=(4, cfg.d_txt)).astype(np.float64)
        path = tmp_path / "feats.txtf"
        encoders.write_txtf(path, feats)
        loaded = encoders.read_txtf(path)
        np.testing.assert_allclose(loaded, feats, atol=1e-6)
        out_file, _ = encoders.text_encode(TextSource(features=loaded), 4, params)
        expected = loaded @ params["text_enc.proj.w"] + params["text_enc.proj.b"]
        np.testing.assert_array_equal(out_file, expected)

    def test_wrong_feature_dim_rejected(self):
        _, params = toy_params()
        with pytest.raises(UnsupportedFormatError):
            encoders.text_encode(TextSource(features=np.zeros((4, 3))), 4, params)

    def test_txtf_bad_magic(self, tmp_path):
        path = tmp_path / "bad.txtf"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(UnsupportedFormatError):
            encoders.read_txtf(path)

    def test_expand_phonemes(self):
        ids = encoders.expand_phonemes([(0, 2), (5, 3)])
        np.testing.assert_array_equal(ids, [0, 0, 5, 5, 5])
        with pytest.raises(InvalidArgumentError):
            encoders.expand_phonemes([])


class TestStyleEncode:
    def test_zero_mel_zero_biases_gives_zero(self):
        cfg, params = toy_params()
        for name in params.names():
            if name.startswith("style_enc.") and name.endswith(".b"):
                params[name] = np.zeros_like(params[name])
        f_s, _ = encoders.style_encode(np.zeros((5, 8)), params, groups=cfg.style_groups)
        np.testing.assert_allclose(f_s, 0.0, atol=1e-12)

    def test_time_constant_input_pools_to_single_frame(self):
        cfg, params = toy_params()
        rng = np.random.default_rng(3)
        row = rng.normal(size=8)
        out_long, _ = encoders.style_encode(np.tile(row, (9, 1)), params,
                                            groups=cfg.style_groups)
        out_one, _ = encoders.style_encode(row[None, :], params, groups=cfg.style_groups)
        np.testing.assert_allclose(out_long, out_one, atol=1e-9)

    def test_single_frame_one_tap_kernel_oracle(self):
        cfg, params = toy_params()
        rng = np.random.default_rng(11)
        # zero all taps except the center: conv acts per frame
        for name in ("conv1", "conv2", "conv3"):
            w = np.zeros_like(params[f"style_enc.{name}.w"])
            w[:, :, 1] = rng.normal(size=w.shape[:2])
            params[f"style_enc.{name}.w"] = w
        mel = rng.normal(size=(1, 8))
        got, _ = encoders.style_encode(mel, params, groups=cfg.style_groups)

        def gn(x, gain, bias, groups):
            xg = x.reshape(groups, -1)
            xh = (xg - xg.mean(axis=1, keepdims=True)) / np.sqrt(
                xg.var(axis=1, keepdims=True) + 1e-5)
            return gain * xh.reshape(-1) + bias

        x = mel[0]
        for name, gname in (("conv1", "gn1"), ("conv2", "gn2"), ("conv3", "gn3")):
            x = params[f"style_enc.{name}.w"][:, :, 1] @ x + params[f"style_enc.{name}.b"]
            x = gn(x, params[f"style_enc.{gname}.g"], params[f"style_enc.{gname}.b"],
                   cfg.style_groups)
            x = np.maximum(x, 0.0)
        x = np.maximum(x @ params["style_enc.fc1.w"] + params["style_enc.fc1.b"], 0.0)
        expected = x @ params["style_enc.fc2.w"] + params["style_enc.fc2.b"]
        np.testing.assert_allclose(got, expected, atol=1e-9)

    def test_interior_shift_tolerance(self):
        # content flanked by constant floor margins, shifted by one stride step
        cfg, params = toy_params()
        rng = np.random.default_rng(7)
        floor = -23.02585092994046  # log(1e-10)
        buf_a = np.full((24, 8), floor)
        content = rng.normal(size=(10, 8))
        buf_a[4:14] = content
        buf_b = np.full((24, 8), floor)
        buf_b[6:16] = content
        out_a, _ = encoders.style_encode(buf_a, params, groups=cfg.style_groups)
        out_b, _ = encoders.style_encode(buf_b, params, groups=cfg.style_groups)
        scale = max(np.max(np.abs(out_a)), 1.0)
        assert np.max(np.abs(out_a - out_b)) / scale < 1e-3

    def test_empty_mel_rejected(self):
        cfg, params = toy_params()
        with pytest.raises(InvalidArgumentError):
            encoders.style_encode(np.zeros((0, 8)), params, groups=cfg.style_groups)

    def test_output_dimension(self):
        cfg, params = toy_params()
        rng = np.random.default_rng(13)
        f_s, _ = encoders.style_encode(rng.normal(size=(7, 8)), params,
                                       groups=cfg.style_groups)
        assert f_s.shape == (cfg.channels,)
