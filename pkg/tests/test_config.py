"""Run-configuration registry: defaults, parsing, validation, round-trips."""

from __future__ import annotations

import dataclasses

import pytest

from sadcoeff.config import RunConfig
from sadcoeff.errors import ConfigError


def test_defaults_carry_reference_values():
    cfg = RunConfig()
    assert cfg.seed == 1234
    assert cfg.fps == 25.0
    assert cfg.num_styles == 46
    assert cfg.clips_per_style == 2
    assert cfg.frames_per_clip == 32
    assert (cfg.steps_expnet, cfg.steps_posevae, cfg.steps_mapper) == (2000, 3000, 2000)
    assert (cfg.lr_expnet, cfg.lr_posevae, cfg.lr_mapper) == (2e-5, 1e-4, 2e-4)
    assert (cfg.lambda_distill, cfg.lambda_read, cfg.lambda_lks) == (2.0, 0.01, 0.01)
    assert cfg.lambda_eye == 200.0
    assert (cfg.lambda_mse, cfg.lambda_kl, cfg.lambda_gan) == (1.0, 1.0, 0.7)
    assert cfg.lambda_kp == 20.0
    assert cfg.latent_dim == 64
    assert cfg.hidden_dim == 256
    assert cfg.enc_channels == (32, 64, 128, 256)
    assert cfg.mapper_channels == (128, 128, 128)
    assert cfg.num_keypoints == 15
    assert cfg.audio_stride_posevae == 4


def test_from_text_parses_comments_and_blanks():
    cfg = RunConfig.from_text(
        "# leading comment\n"
        "\n"
        "seed = 7   # trailing comment\n"
        "fps=30\n"
        "enc_channels = 4, 8, 16, 32\n")
    assert cfg.seed == 7
    assert cfg.fps == 30.0
    assert cfg.enc_channels == (4, 8, 16, 32)
    # unmentioned keys keep their defaults
    assert cfg.steps_expnet == 2000


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_text("not_a_key = 3\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_text("seed = 1\nseed = 2\n")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_text("seed 3\n")


@pytest.mark.parametrize("line", [
    "num_styles = 47",        # above the style one-hot size
    "num_styles = 0",
    "clips_per_style = 0",
    "frames_per_clip = 31",   # below one pose window
    "fps = 0",
    "lr_expnet = -1e-3",
    "audio_stride_posevae = 0",
])
def test_out_of_range_values_rejected(line):
    with pytest.raises(ConfigError):
        RunConfig.from_text(line + "\n")


def test_non_numeric_and_nan_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_text("seed = twelve\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("fps = nan\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("seed = 1.5\n")


def test_intlist_length_enforced():
    with pytest.raises(ConfigError):
        RunConfig.from_text("enc_channels = 4, 8\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("mapper_channels = 1, 2, 3, 4\n")


def test_dump_round_trips():
    cfg = RunConfig().replace(seed=99, fps=30.0, enc_channels=(4, 4, 8, 8), lambda_gan=0.0)
    again = RunConfig.from_text(cfg.dump())
    assert again == cfg
    # a default config round-trips too
    assert RunConfig.from_text(RunConfig().dump()) == RunConfig()


def test_replace_validates_and_leaves_original_alone():
    cfg = RunConfig()
    new = cfg.replace(seed=5)
    assert new.seed == 5 and cfg.seed == 1234
    with pytest.raises(ConfigError):
        cfg.replace(bogus_key=1)
    with pytest.raises(ConfigError):
        cfg.replace(num_styles=47)
    assert dataclasses.is_dataclass(cfg)
