import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zfseld.config import RunConfig


def tiny_run_config() -> RunConfig:
    """Desk-test configuration: tiny scenes + a very small network."""
    cfg = RunConfig()
    cfg.seed = 42
    cfg.scene.class_names = ["alarm", "dog", "engine", "whistle"]
    cfg.scene.scene_seconds = 4.0
    cfg.scene.events_min = 2
    cfg.scene.events_max = 4
    cfg.scene.event_min_seconds = 0.4
    cfg.scene.event_max_seconds = 1.2
    cfg.scene.noise_rms = 0.02
    cfg.embedding.dim = 32
    cfg.network.embed_dim = 32
    cfg.network.conv_widths = [6, 8]
    cfg.network.conv_pool_time = [4, 2]
    cfg.network.conv_pool_freq = [4, 4]
    cfg.network.input_freq_pool = 4
    cfg.network.attn_dim = 16
    cfg.network.attn_heads = 2
    cfg.network.ffn_dim = 24
    cfg.train.iterations = 40
    cfg.train.batch_size = 4
    cfg.train.warmup_iters = 10
    cfg.train.val_interval = 20
    cfg.train.val_scenes = 1
    cfg.train.val_batches = 1
    cfg.validate()
    return cfg


@pytest.fixture
def tiny_config():
    return tiny_run_config()
