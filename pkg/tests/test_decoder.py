import numpy as np
import pytest

from motionmem import model
from motionmem.decoder import DecoderConfig, decode, decode_forward, decode_static
from motionmem.errors import CapacityError, InvalidArgumentError
from motionmem.training import TrainConfig


def toy(seed=0, heads=2, layers=2):
    cfg = TrainConfig(n_slots=3, channels=6, d_txt=5, n_vertices=4, heads=heads,
                      layers=layers, ff_width=8, style_width=8, style_groups=2,
                      motion_input_scale=1.0, slot_init_gain=1.0)
    params = model.init_params(cfg, np.random.default_rng(seed), mel_bins=8)
    rng = np.random.default_rng(seed + 100)
    params["dec.head.w"] = rng.normal(0, 0.3, size=params["dec.head.w"].shape)
    params["dec.head.b"] = rng.normal(0, 0.1, size=params["dec.head.b"].shape)
    return cfg, params, model.decoder_config(cfg)


class TestDecodeContract:
    def test_zero_head_emits_template_pose(self):
        cfg, params, dec_cfg = toy()
        params["dec.head.w"] = np.zeros_like(params["dec.head.w"])
        params["dec.head.b"] = np.zeros_like(params["dec.head.b"])
        rng = np.random.default_rng(1)
        out = decode(params, dec_cfg, rng.normal(size=(5, 3)), rng.normal(size=(5, 6)), 4)
        assert np.all(out == 0.0)

    def test_output_shape(self):
        cfg, params, dec_cfg = toy()
        rng = np.random.default_rng(2)
        for t in (1, 2, 9):
            out = decode(params, dec_cfg, rng.normal(size=(t, 3)),
                         rng.normal(size=(t, 6)), 4)
            assert out.shape == (t, 4, 3)

    def test_length_mismatch_rejected(self):
        cfg, params, dec_cfg = toy()
        with pytest.raises(InvalidArgumentError):
            decode(params, dec_cfg, np.zeros((4, 3)), np.zeros((5, 6)), 4)

    def test_capacity_error(self):
        cfg, params, dec_cfg = toy()
        t = dec_cfg.max_frames + 1
        with pytest.raises(CapacityError):
            decode(params, dec_cfg, np.zeros((t, 3)), np.zeros((t, 6)), 4)

    def test_determinism_bitwise(self):
        cfg, params, dec_cfg = toy()
        rng = np.random.default_rng(3)
        f_txt, rec = rng.normal(size=(6, 3)), rng.normal(size=(6, 6))
        a = decode(params, dec_cfg, f_txt, rec, 4)
        b = decode(params, dec_cfg, f_txt, rec, 4)
        np.testing.assert_array_equal(a, b)

    def test_heads_must_divide_width(self):
        with pytest.raises(InvalidArgumentError):
            DecoderConfig(d_model=6, heads=4)


class TestCausality:
    @pytest.mark.parametrize("layers", [1, 2])
    @pytest.mark.parametrize("heads", [1, 4])
    def test_future_perturbation_leaves_past_unchanged(self, layers, heads):
        cfg = TrainConfig(n_slots=3, channels=8, d_txt=5, n_vertices=4, heads=heads,
                          layers=layers, ff_width=8, style_width=8, style_groups=2,
                          motion_input_scale=1.0, slot_init_gain=1.0)
        params = model.init_params(cfg, np.random.default_rng(7), mel_bins=8)
        rng = np.random.default_rng(8)
        params["dec.head.w"] = rng.normal(0, 0.3, size=params["dec.head.w"].shape)
        dec_cfg = model.decoder_config(cfg)
        t = 7
        f_txt, rec = rng.normal(size=(t, 3)), rng.normal(size=(t, 8))
        base = decode(params, dec_cfg, f_txt, rec, 4)
        for t_perturb in (3, 6):
            f2, r2 = f_txt.copy(), rec.copy()
            f2[t_perturb] += rng.normal(size=3)
            r2[t_perturb] += rng.normal(size=8)
            out = decode(params, dec_cfg, f2, r2, 4)
            np.testing.assert_allclose(out[:t_perturb], base[:t_perturb], atol=1e-9)
            assert np.max(np.abs(out[t_perturb:] - base[t_perturb:])) > 1e-9


class TestStaticPath:
    def test_static_cache_matches_full_forward(self):
        cfg, params, dec_cfg = toy()
        rng = np.random.default_rng(5)
        f_txt, rec = rng.normal(size=(4, 3)), rng.normal(size=(4, 6))
        full, _ = decode_forward(params, dec_cfg, f_txt, rec, 4)
        static = decode_static(params, dec_cfg, f_txt)
        fast, _ = decode_forward(params, dec_cfg, f_txt, rec, 4, static=static)
        np.testing.assert_allclose(fast, full, atol=1e-12)
