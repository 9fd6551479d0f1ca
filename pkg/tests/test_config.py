import json

import pytest

from zfseld.config import RunConfig, config_from_dict, load_config, save_config
from zfseld.errors import ConfigError


class TestRunConfig:
    def test_defaults_valid(self):
        RunConfig().validate()

    def test_roundtrip_exact(self, tmp_path):
        cfg = RunConfig()
        cfg.seed = 1234
        cfg.train.peak_lr = 3.3e-4
        cfg.scene.noise_rms = 0.0123456789
        path = tmp_path / "config.json"
        save_config(cfg, path)
        loaded = load_config(path)
        assert loaded == cfg

    def test_dict_roundtrip(self):
        cfg = RunConfig()
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            config_from_dict({"sede": 3})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="loss"):
            config_from_dict({"loss": {"beta_embed": 0.5, "beta_emded": 0.1}})

    def test_validation_enumerates_problems(self):
        cfg = RunConfig()
        cfg.loss.beta_embed = -1.0
        cfg.decoder.sigma_a = 0.9  # > sigma_b
        cfg.scene.max_polyphony = 5  # > n_tracks
        with pytest.raises(ConfigError) as err:
            cfg.validate()
        message = str(err.value)
        assert "coefficients" in message
        assert "sigma" in message
        assert "max_polyphony" in message

    def test_dim_cross_check(self):
        cfg = RunConfig()
        cfg.embedding.dim = 256
        with pytest.raises(ConfigError, match="embed_dim"):
            cfg.validate()

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(path)

    def test_sections_parse_from_partial_dict(self):
        cfg = config_from_dict({"seed": 7, "loss": {"beta_embed": 0.5}})
        assert cfg.seed == 7
        assert cfg.loss.beta_embed == 0.5
        assert cfg.loss.beta_accdoa == 0.4  # default preserved
