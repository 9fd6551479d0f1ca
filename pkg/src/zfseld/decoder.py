"""Turn model outputs plus a support set into per-frame detections.

A track survives thresholding when its activity (coupled-DOA norm)
clears a low threshold for the single most-active track and a high
threshold for every other track; single sources are easy, so the low
gate buys true positives while the high gate suppresses spurious extra
tracks. Surviving tracks get the class of their nearest support
embedding by cosine similarity, with an optional background-noise
support that swallows (rejects) noise-like tracks. Optionally, frames
left with exactly one detection can have their class overridden by the
nearest-support class of a whole-segment encoder embedding, which never
touches DOA or activity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .embeddings import SupportSet
from .errors import ConfigError, ValidationError
from .geometry import decode_accdoa

#: class id marking "background noise / no event"
NOISE_CLASS = -1

EPS = 1e-8


@dataclass
class DecoderConfig:
    sigma_a: float = 0.2
    sigma_b: float = 0.8
    use_noise_rejection: bool = True
    use_clap_combination: bool = False

    def validate(self) -> list[str]:
        if not 0.0 <= self.sigma_a <= self.sigma_b <= 1.0:
            return ["decoder thresholds must satisfy 0 <= sigma_a <= sigma_b <= 1"]
        return []


@dataclass
class Detection:
    frame: int
    class_id: int
    doa: np.ndarray
    activity: float
    track: int


def gate_tracks(accdoa_frame: np.ndarray, config: DecoderConfig) -> list[int]:
    """Indices of tracks whose activity clears their threshold.

    The most-active track (ties -> lowest index) is tested against
    sigma_a, all others against sigma_b.
    """
    acc = np.asarray(accdoa_frame, dtype=float)
    if acc.ndim != 2 or acc.shape[1] != 3:
        raise ValidationError(f"expected (N, 3) coupled-DOA frame, got {acc.shape}")
    activities = np.linalg.norm(acc, axis=1)
    top = int(np.argmax(activities))
    passing = []
    for n, a in enumerate(activities):
        threshold = config.sigma_a if n == top else config.sigma_b
        if a >= threshold:
            passing.append(n)
    return passing


def assign_class(
    embedding: np.ndarray, support: SupportSet, use_noise_rejection: bool = True
) -> tuple[int, float]:
    """Nearest support class by cosine similarity.

    Returns (class_id, similarity); class_id is NOISE_CLASS when the
    noise support wins (strictly) or the query embedding is zero. Ties
    between classes go to the lowest class index, and a class beats the
    noise support on an exact tie.
    """
    e = np.asarray(embedding, dtype=float)
    norm = np.linalg.norm(e)
    if norm <= EPS:
        return NOISE_CLASS, 0.0
    sims = (support.class_embeddings @ e) / (
        (np.linalg.norm(support.class_embeddings, axis=1) + EPS) * (norm + EPS)
    )
    best = int(np.argmax(sims))
    if use_noise_rejection:
        noise_sim = float(
            np.dot(support.noise_embedding, e)
            / ((np.linalg.norm(support.noise_embedding) + EPS) * (norm + EPS))
        )
        if noise_sim > sims[best]:
            return NOISE_CLASS, noise_sim
    return best, float(sims[best])


def decode_frame(
    emb_frame: np.ndarray,
    accdoa_frame: np.ndarray,
    support: SupportSet,
    config: DecoderConfig,
    frame: int = 0,
) -> list[Detection]:
    """Detections for one output frame: gate, classify, reject, dedup.

    Two surviving tracks of the same class collapse into the one with
    the higher activity (ties -> lower track index).
    """
    best_per_class: dict[int, Detection] = {}
    for track in gate_tracks(accdoa_frame, config):
        activity, doa = decode_accdoa(accdoa_frame[track])
        if doa is None:
            continue
        class_id, _sim = assign_class(
            emb_frame[track], support, config.use_noise_rejection
        )
        if class_id == NOISE_CLASS:
            continue
        det = Detection(frame, class_id, doa, activity, track)
        prev = best_per_class.get(class_id)
        if prev is None or det.activity > prev.activity:
            best_per_class[class_id] = det
    return sorted(best_per_class.values(), key=lambda d: d.track)


def override_single_source(
    detections: list[Detection], support: SupportSet, clap_embedding: np.ndarray
) -> list[Detection]:
    """Re-label a lone detection with the segment-level embedding's class.

    Frames with zero or two-plus detections pass through untouched; DOA
    and activity are never modified, only the class field.
    """
    if len(detections) != 1:
        return detections
    e = np.asarray(clap_embedding, dtype=float)
    sims = (support.class_embeddings @ e) / (
        (np.linalg.norm(support.class_embeddings, axis=1) + EPS)
        * (np.linalg.norm(e) + EPS)
    )
    return [replace(detections[0], class_id=int(np.argmax(sims)))]


def label_to_output_frame(
    label_idx: int, frames_per_label: int, time_pool: int, n_out: int
) -> int:
    """Nearest output frame for a segment-local label frame."""
    center = label_idx * frames_per_label + frames_per_label // 2
    return min(center // time_pool, n_out - 1)


def decode_segment(
    emb: np.ndarray,
    acc: np.ndarray,
    support: SupportSet,
    config: DecoderConfig,
    seg_frames: int,
    frames_per_label: int,
    time_pool: int,
    clap_embedding: np.ndarray | None = None,
) -> list[Detection]:
    """Detections for one segment at label-frame rate.

    ``emb``/``acc`` are the (T_out, N, .) model outputs of one segment of
    ``seg_frames`` feature frames; label frames are mapped onto output
    frames by nearest neighbour. When the single-source override is
    enabled, ``clap_embedding`` must hold the whole-segment embedding.
    """
    if config.use_clap_combination and clap_embedding is None:
        raise ConfigError(
            "single-source override enabled but no segment embedding was provided"
        )
    n_out = emb.shape[0]
    n_labels = -(-seg_frames // frames_per_label)
    out: list[Detection] = []
    for l in range(n_labels):
        j = label_to_output_frame(l, frames_per_label, time_pool, n_out)
        dets = decode_frame(emb[j], acc[j], support, config, frame=l)
        if config.use_clap_combination:
            dets = override_single_source(dets, support, clap_embedding)
        out.extend(dets)
    return out


def decode_with_clap_override(
    emb: np.ndarray,
    acc: np.ndarray,
    support: SupportSet,
    clap_embedding: np.ndarray,
    config: DecoderConfig,
    seg_frames: int,
    frames_per_label: int,
    time_pool: int,
) -> list[Detection]:
    """``decode_segment`` with the single-source class override forced on."""
    forced = replace(config, use_clap_combination=True)
    return decode_segment(
        emb, acc, support, forced, seg_frames, frames_per_label, time_pool,
        clap_embedding=clap_embedding,
    )
