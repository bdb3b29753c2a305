"""Architecture config validation and the preset size ladder."""

import pytest

from deskclip.errors import ConfigError
from deskclip.models.config import (
    ENCODER_PRESETS,
    REFERENCE_PARAM_COUNTS_M,
    ModelConfig,
    ProjectorConfig,
    TextConfig,
    VisionConfig,
    micro_model,
    vision_param_count,
)


class TestVisionConfig:
    def test_valid(self):
        VisionConfig(layers=2, width=32, heads=2, patch=16, resolution=32).validate()

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(layers=0, width=32, heads=2),
            dict(layers=2, width=32, heads=3),  # width not divisible by heads
            dict(layers=2, width=32, heads=2, patch=10),
            dict(layers=2, width=32, heads=2, patch=16, resolution=40),
            dict(layers=2, width=32, heads=2, pool="max"),
            dict(layers=2, width=18, heads=2),  # width not divisible by 4
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            VisionConfig(**kwargs).validate()

    def test_at_resolution_shares_everything_else(self):
        a = ENCODER_PRESETS["tiny"]
        b = a.at_resolution(384)
        assert b.resolution == 384
        assert (b.layers, b.width, b.heads, b.patch) == (a.layers, a.width, a.heads, a.patch)

    def test_mlp_default_is_4x(self):
        assert VisionConfig(layers=1, width=64, heads=2).resolved_mlp() == 256
        assert ENCODER_PRESETS["sovit400m"].resolved_mlp() == 4304


class TestTextConfig:
    def test_defaults_valid(self):
        cfg = TextConfig()
        cfg.validate()
        assert cfg.encoder_context == 80
        assert cfg.decoder_context == 128

    def test_invalid_context(self):
        with pytest.raises(ConfigError):
            TextConfig(encoder_context=0).validate()

    def test_invalid_vocab(self):
        with pytest.raises(ConfigError):
            TextConfig(vocab_size=0).validate()


class TestProjectorConfig:
    def test_activation_gate(self):
        ProjectorConfig(in_width=8, hidden=8, out_width=8).validate()
        with pytest.raises(ConfigError):
            ProjectorConfig(in_width=8, hidden=8, out_width=8, activation="relu").validate()


class TestPresetLadder:
    def test_all_presets_valid(self):
        for cfg in ENCODER_PRESETS.values():
            cfg.validate()

    @pytest.mark.parametrize("name", sorted(ENCODER_PRESETS))
    def test_param_count_within_5_percent(self, name):
        count_m = vision_param_count(ENCODER_PRESETS[name]) / 1e6
        ref = REFERENCE_PARAM_COUNTS_M[name]
        assert abs(count_m - ref) / ref < 0.05, f"{name}: {count_m:.1f}M vs {ref}M"

    def test_ladder_is_monotone(self):
        order = ["tiny", "small", "base", "large", "sovit400m", "huge"]
        counts = [vision_param_count(ENCODER_PRESETS[n]) for n in order]
        assert counts == sorted(counts)


class TestModelConfig:
    def test_micro_round_trip(self):
        cfg = micro_model()
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_micro_is_tiny_but_complete(self):
        cfg = micro_model()
        assert cfg.vision.layers == 2
        assert cfg.vision.width == 32
        assert cfg.with_decoder

    def test_embed_dim_guard(self):
        with pytest.raises(ConfigError):
            ModelConfig(vision=ENCODER_PRESETS["tiny"], embed_dim=0).validate()
