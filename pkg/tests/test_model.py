"""Model assembly: stages, skip wiring, padding, and the cost model."""

import numpy as np
import pytest

from dsct.errors import ConfigError
from dsct.gradcheck import module_grad_check
from dsct.model import (DsctModel, EncoderStage, ModelConfig, Stem,
                        build_model, flops_estimate)
from dsct.tensor import Tensor, no_grad, tensor_sum

TINY = dict(base_channels=4, scale_channels=(8, 8), patch=2, heads=2,
            mlp_ratio=2)


def init_rng(seed=42):
    return np.random.default_rng(seed)


def tiny_model(seed=42, dtype=np.float32, **overrides) -> DsctModel:
    cfg = ModelConfig(**{**TINY, **overrides})
    return build_model(cfg, init_rng(seed), dtype=dtype)


def frames(rng, n=1, c=3, h=32, w=32, dtype=np.float32):
    return [Tensor(rng.standard_normal((n, c, h, w)).astype(dtype))
            for _ in range(3)]


class TestConfig:
    def test_defaults_match_published_setting(self):
        cfg = ModelConfig()
        assert cfg.patch == 4
        assert cfg.heads == 4
        assert cfg.base_channels == 32
        assert cfg.scale_channels == (64, 128)
        assert cfg.aggregation_mode == "tfam"
        assert cfg.stage_mode == "dual"

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(stage_mode="both")
        with pytest.raises(ConfigError):
            ModelConfig(aggregation_mode="median")

    def test_pad_multiple_covers_downsamples_and_patches(self):
        assert ModelConfig().pad_multiple == 16
        assert ModelConfig(**TINY).pad_multiple == 16


class TestStem:
    def test_output_shape(self, rng):
        stem = Stem(8, init_rng())
        out = stem(Tensor(rng.standard_normal((2, 3, 12, 12)).astype(np.float32)),
                   training=True)
        assert out.shape == (2, 8, 12, 12)

    def test_zero_input_gives_zero_output(self):
        stem = Stem(6, init_rng())
        out = stem(Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32)),
                   training=True)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_gradcheck(self, rng):
        stem = Stem(4, init_rng(), dtype=np.float64)
        coeff = Tensor(rng.standard_normal((1, 4, 16, 16)))
        errs = module_grad_check(
            stem, lambda m, t: tensor_sum(m(t["x"], True) * coeff),
            {"x": rng.standard_normal((1, 3, 16, 16))})
        assert max(errs.values()) < 1e-3


class TestEncoderStage:
    def test_downsamples_by_two(self, rng):
        stage = EncoderStage(16, 32, patch=4, heads=4, mlp_ratio=2,
                             rng=init_rng())
        x = Tensor(rng.standard_normal((1, 16, 32, 32)).astype(np.float32))
        assert stage(x).shape == (1, 32, 16, 16)

    def test_zeroed_attention_leaves_conv_plus_passthrough(self, rng):
        from test_attention import zero_branches

        stage = EncoderStage(4, 8, patch=2, heads=2, mlp_ratio=2,
                             rng=init_rng(), dtype=np.float64)
        zero_branches(stage.scem)
        x = Tensor(rng.standard_normal((1, 4, 8, 8)))
        got = stage(x).data

        from dsct.tensor import relu
        h = relu(stage.down(x))
        want = h + stage.conv2(relu(stage.conv1(h)))
        np.testing.assert_array_equal(got, want.data)

    def test_determinism(self, rng):
        stage = EncoderStage(4, 8, patch=2, heads=2, mlp_ratio=2,
                             rng=init_rng())
        x = Tensor(rng.standard_normal((2, 4, 8, 8)).astype(np.float32))
        np.testing.assert_array_equal(stage(x).data, stage(x).data)


class TestModelForward:
    def test_dual_returns_two_distinct_outputs(self, rng):
        model = tiny_model()
        with no_grad():
            coarse, final = model(*frames(rng), training=False)
        assert coarse is not final
        assert coarse.shape == final.shape == (1, 3, 32, 32)

    def test_coarse_mode_returns_same_tensor_twice(self, rng):
        model = tiny_model(stage_mode="coarse")
        with no_grad():
            coarse, final = model(*frames(rng), training=False)
        assert coarse is final

    def test_fine_mode_has_no_coarse_output(self, rng):
        model = tiny_model(stage_mode="fine")
        with no_grad():
            coarse, final = model(*frames(rng), training=False)
        assert coarse is None
        assert final.shape == (1, 3, 32, 32)

    @pytest.mark.parametrize("h,w", [(32, 32), (96, 96), (100, 100),
                                     (160, 160), (36, 44)])
    def test_shape_preserved(self, rng, h, w):
        model = tiny_model()
        with no_grad():
            _, final = model(*frames(rng, h=h, w=w), training=False)
        assert final.shape == (1, 3, h, w)

    def test_internal_padding_to_multiple(self, rng):
        model = tiny_model()
        x = Tensor(rng.standard_normal((1, 3, 100, 100)).astype(np.float32))
        assert model._pad(x).shape == (1, 3, 112, 112)

    def test_forward_is_pure(self, rng):
        model = tiny_model()
        fs = frames(rng)
        with no_grad():
            a = model(*fs, training=False)[1].data
            b = model(*fs, training=False)[1].data
        np.testing.assert_array_equal(a, b)

    def test_zeroed_fine_decoder_head_gives_zero_output(self, rng):
        model = tiny_model(stage_mode="fine")
        model.fine.smooth2.w.data[:] = 0.0
        model.fine.smooth2.b.data[:] = 0.0
        with no_grad():
            _, final = model(*frames(rng), training=False)
        np.testing.assert_array_equal(final.data, 0.0)

    def test_coarse_output_ignores_attention_when_branches_zeroed(self, rng):
        from test_attention import zero_branches

        def neutralize(model):
            for stage in (model.coarse.stages1 + model.coarse.stages2):
                zero_branches(stage.scem)
            for fusion in (model.coarse.skip_mid, model.coarse.skip_top):
                fusion.conv_out.w.data[:] = 0.0
                fusion.conv_out.b.data[:] = 0.0

        a = tiny_model(stage_mode="coarse")
        b = tiny_model(stage_mode="coarse")
        neutralize(a)
        neutralize(b)
        # scramble every weight that only feeds the silenced paths
        for stage in (b.coarse.stages1 + b.coarse.stages2):
            stage.scem.channel.wq.w.data[:] = 9.0
            stage.scem.spatial.wq.w.data[:] = -3.0
            stage.scem.mlp.fc1.w.data[:] = 5.0
        for fusion in (b.coarse.skip_mid, b.coarse.skip_top):
            fusion.msa.wq.w.data[:] = 2.0
            fusion.conv_in.w.data[:] = 1.0

        fs = frames(rng)
        with no_grad():
            out_a = a(*fs, training=False)[1].data
            out_b = b(*fs, training=False)[1].data
        np.testing.assert_array_equal(out_a, out_b)

    @pytest.mark.parametrize("toggle", ["enable_fskip", "enable_cfskip",
                                        "enable_tfam_skip"])
    def test_skip_toggles_change_values_not_shapes(self, rng, toggle):
        base = tiny_model()
        ablated = tiny_model(**{toggle: False})
        fs = frames(rng)
        with no_grad():
            out_base = base(*fs, training=False)[1].data
            out_abl = ablated(*fs, training=False)[1].data
        assert out_base.shape == out_abl.shape
        assert not np.array_equal(out_base, out_abl)

    def test_unshared_branches_build_three_encoders(self):
        model = tiny_model(share_branch_weights=False)
        assert len(model.coarse.stems) == 3
        shared = tiny_model()
        assert len(shared.coarse.stems) == 1

    def test_aggregation_mean_and_conv_modes_run(self, rng):
        for mode in ("mean", "conv"):
            model = tiny_model(aggregation_mode=mode)
            with no_grad():
                _, final = model(*frames(rng), training=False)
            assert final.shape == (1, 3, 32, 32)


class TestFlops:
    def test_single_conv_closed_form(self):
        # fine-stage stem conv1 is one un-tripled 3->64 3x3 conv at 96x96
        rep = flops_estimate(ModelConfig(base_channels=64), 96, 96)
        rows = dict((name, n) for name, _, n in rep.rows)
        assert rows["fine.stem.conv1"] == 31_850_496

    def test_default_model_total_frozen(self):
        # hand count over the layer table at 96x96, default widths
        rep = flops_estimate(ModelConfig(), 96, 96)
        assert rep.total() == 9_947_971_584

    def test_conv_flops_linear_in_height(self):
        base = flops_estimate(ModelConfig(), 96, 96).by_category()
        tall = flops_estimate(ModelConfig(), 192, 96).by_category()
        assert tall["conv"] == 2 * base["conv"]

    def test_coarse_only_drops_fine_rows(self):
        rep = flops_estimate(ModelConfig(stage_mode="coarse"), 96, 96)
        assert all(not name.startswith("fine.") for name, _, _ in rep.rows)

    def test_report_is_formatted_table(self):
        text = flops_estimate(ModelConfig(), 96, 96).format()
        assert "total" in text
        assert "subtotal conv" in text
