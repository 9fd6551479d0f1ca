"""Zero- and few-shot sound event localization and detection toolkit."""

from .config import RunConfig, config_from_dict, load_config, save_config
from .decoder import DecoderConfig, Detection, decode_frame, decode_segment, gate_tracks
from .embeddings import (
    EmbeddingProvider,
    FileEmbeddingProvider,
    StubEmbeddingProvider,
    SupportSet,
    build_support_few,
    build_support_zero,
)
from .features import FeatureConfig, extract_features, segment, stft
from .geometry import (
    angular_distance,
    decode_accdoa,
    encode_accdoa,
    foa_gains,
    spherical_to_cartesian,
)
from .losses import LossConfig, accdoa_term, embed_term, pit_loss, pit_loss_grad
from .metrics import MetricsReport, SELDAccumulator, evaluate_frames, match_class_segment, seld_error
from .network import EmbedAccdoaNet, NetworkConfig, load_checkpoint, save_checkpoint
from .scenes import EventSpec, SceneAnnotation, mix_scene, oracle_targets, rotate_foa, spatialize

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "config_from_dict",
    "load_config",
    "save_config",
    "DecoderConfig",
    "Detection",
    "decode_frame",
    "decode_segment",
    "gate_tracks",
    "EmbeddingProvider",
    "FileEmbeddingProvider",
    "StubEmbeddingProvider",
    "SupportSet",
    "build_support_few",
    "build_support_zero",
    "FeatureConfig",
    "extract_features",
    "segment",
    "stft",
    "angular_distance",
    "decode_accdoa",
    "encode_accdoa",
    "foa_gains",
    "spherical_to_cartesian",
    "LossConfig",
    "accdoa_term",
    "embed_term",
    "pit_loss",
    "pit_loss_grad",
    "MetricsReport",
    "SELDAccumulator",
    "evaluate_frames",
    "match_class_segment",
    "seld_error",
    "EmbedAccdoaNet",
    "NetworkConfig",
    "load_checkpoint",
    "save_checkpoint",
    "EventSpec",
    "SceneAnnotation",
    "mix_scene",
    "oracle_targets",
    "rotate_foa",
    "spatialize",
    "__version__",
]
