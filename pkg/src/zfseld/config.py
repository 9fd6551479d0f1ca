"""Run configuration: one strict, serializable bundle of every tunable."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .decoder import DecoderConfig
from .errors import ConfigError
from .features import FeatureConfig
from .losses import LossConfig
from .network import NetworkConfig
from .optim import LrSchedule
from .scenes import SceneParams


@dataclass
class EmbeddingConfig:
    dim: int = 512
    provider: str = "stub"  # "stub" or "file"
    stub_seed: int = 0
    stub_noise_level: float = 0.1
    orthogonalize: bool = False
    table_path: str | None = None
    prompt_template: str = "{name}"

    def validate(self) -> list[str]:
        problems = []
        if self.dim < 1:
            problems.append("embedding.dim must be >= 1")
        if self.provider not in ("stub", "file"):
            problems.append("embedding.provider must be 'stub' or 'file'")
        if self.provider == "file" and not self.table_path:
            problems.append("embedding.table_path required for the file provider")
        if self.stub_noise_level < 0:
            problems.append("embedding.stub_noise_level must be >= 0")
        return problems


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    peak_lr: float = 1e-3
    warmup_iters: int = 250
    decay_factor: float = 0.9
    decay_every: int = 1000
    weight_decay: float = 1e-6
    val_interval: int = 250
    val_scenes: int = 4
    val_batches: int = 4
    rotation_augment: bool = True

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.peak_lr, self.warmup_iters, self.decay_factor, self.decay_every)

    def validate(self) -> list[str]:
        problems = []
        if self.iterations < 1 or self.batch_size < 1:
            problems.append("train.iterations and train.batch_size must be >= 1")
        if self.peak_lr < 0 or self.warmup_iters < 0:
            problems.append("train.peak_lr and train.warmup_iters must be >= 0")
        if not 0 < self.decay_factor <= 1:
            problems.append("train.decay_factor must be in (0, 1]")
        if self.decay_every < 1 or self.val_interval < 1:
            problems.append("train.decay_every and train.val_interval must be >= 1")
        if self.val_scenes < 0 or self.val_batches < 1:
            problems.append("train.val_scenes must be >= 0, val_batches >= 1")
        return problems


@dataclass
class RunConfig:
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    scene: SceneParams = field(
        default_factory=lambda: SceneParams(class_names=["tone_a", "tone_b", "tone_c", "tone_d"])
    )
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        """Raise ConfigError with every problem enumerated."""
        problems = []
        problems += self.features.validate()
        problems += self.scene.validate()
        problems += self.embedding.validate()
        problems += self.network.validate()
        problems += self.loss.validate()
        problems += self.decoder.validate()
        problems += self.train.validate()
        if self.embedding.dim != self.network.embed_dim:
            problems.append(
                f"embedding.dim ({self.embedding.dim}) must equal "
                f"network.embed_dim ({self.network.embed_dim})"
            )
        if self.scene.max_polyphony > self.network.n_tracks:
            problems.append(
                f"scene.max_polyphony ({self.scene.max_polyphony}) exceeds "
                f"network.n_tracks ({self.network.n_tracks})"
            )
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "features": FeatureConfig,
    "scene": SceneParams,
    "embedding": EmbeddingConfig,
    "network": NetworkConfig,
    "loss": LossConfig,
    "decoder": DecoderConfig,
    "train": TrainConfig,
}


def _build_section(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    """Strict parse: unknown keys anywhere are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    for name, cls in _SECTIONS.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"config section {name!r} must be a mapping")
            kwargs[name] = _build_section(cls, data[name], name)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    cfg = config_from_dict(data)
    cfg.validate()
    return cfg


def save_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
