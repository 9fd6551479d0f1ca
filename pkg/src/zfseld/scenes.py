"""Synthetic spatial scene generation with oracle training targets.

Scenes are sums of direct-path-spatialized mono events plus diffuse
Gaussian noise. Spatialization multiplies the source by the four FOA
encoding gains of its (static) direction; there is no reverberation.
Ground truth is carried at a 100 ms label-frame rate.

Oracle targets assign each event to one of N output tracks for its whole
duration (lowest free track at onset). Active track-frames carry the
event's clean-signal audio embedding and its unit DOA; unused
track-frames carry zero vectors for both.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry, sources
from .embeddings import EmbeddingProvider
from .errors import CapacityError, SceneError, ValidationError

LABEL_FRAME_SECONDS = 0.1


@dataclass
class EventSpec:
    """One directional sound event occupying [onset, offset) seconds."""

    class_id: int
    onset: float
    offset: float
    azimuth: float
    elevation: float
    gain: float = 1.0
    source: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.onset < self.offset:
            raise ValidationError(
                f"need 0 <= onset < offset, got [{self.onset}, {self.offset})"
            )
        if self.gain <= 0:
            raise ValidationError("event gain must be positive")

    @property
    def direction(self) -> np.ndarray:
        return geometry.spherical_to_cartesian(self.azimuth, self.elevation)

    def clean_wave(self) -> np.ndarray:
        """Gain-scaled mono source; equals the W channel of its spatialization."""
        if self.source is None:
            raise ValidationError("event has no source material attached")
        return self.gain * np.asarray(self.source, dtype=float)


def n_label_frames(n_samples: int, sample_rate: int) -> int:
    return int(np.ceil(n_samples / (LABEL_FRAME_SECONDS * sample_rate)))


def label_frame_span(onset: float, offset: float) -> tuple[int, int]:
    """Half-open label-frame range [first, last) overlapping [onset, offset)."""
    first = int(np.floor(onset / LABEL_FRAME_SECONDS + 1e-9))
    last = int(np.ceil(offset / LABEL_FRAME_SECONDS - 1e-9))
    return first, max(last, first + 1)


@dataclass
class SceneAnnotation:
    """Ground truth for one synthetic scene."""

    events: list[EventSpec]
    scene_seconds: float
    sample_rate: int

    @property
    def n_samples(self) -> int:
        return int(round(self.scene_seconds * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return n_label_frames(self.n_samples, self.sample_rate)

    def frame_table(self) -> dict[int, list[tuple[int, int, float, float]]]:
        """frame -> list of (event_index, class_id, azimuth, elevation)."""
        table: dict[int, list[tuple[int, int, float, float]]] = {}
        for i, ev in enumerate(self.events):
            first, last = label_frame_span(ev.onset, ev.offset)
            for f in range(first, min(last, self.n_frames)):
                table.setdefault(f, []).append((i, ev.class_id, ev.azimuth, ev.elevation))
        return table

    def max_polyphony(self) -> int:
        table = self.frame_table()
        return max((len(v) for v in table.values()), default=0)


def spatialize(event: EventSpec, scene_seconds: float, sample_rate: int) -> np.ndarray:
    """Place a direct-path FOA image of the event into a silent scene.

    Returns a (4, n_samples) array: encoding gains of the event direction
    times the gain-scaled source, starting at the onset sample.
    """
    n_total = int(round(scene_seconds * sample_rate))
    src = event.clean_wave()
    start = int(round(event.onset * sample_rate))
    if start < 0 or start + src.shape[0] > n_total:
        raise SceneError(
            f"event [{event.onset}, {event.offset}) does not fit a "
            f"{scene_seconds} s scene"
        )
    gains = geometry.foa_gains(event.azimuth, event.elevation)
    out = np.zeros((4, n_total))
    out[:, start : start + src.shape[0]] = gains[:, None] * src[None, :]
    return out


def mix_scene(
    events: list[EventSpec],
    scene_seconds: float,
    sample_rate: int,
    noise_rms: float = 0.0,
    rng: np.random.Generator | None = None,
    max_polyphony: int | None = None,
) -> tuple[np.ndarray, SceneAnnotation]:
    """Sum of spatialized events plus diffuse noise, with its annotation.

    Raises SceneError when the label-frame polyphony exceeds
    ``max_polyphony`` (checked before any audio is rendered).
    """
    annotation = SceneAnnotation(list(events), scene_seconds, sample_rate)
    if max_polyphony is not None:
        poly = annotation.max_polyphony()
        if poly > max_polyphony:
            raise SceneError(
                f"polyphony {poly} exceeds the cap of {max_polyphony}"
            )
    wave = np.zeros((4, annotation.n_samples))
    for ev in events:
        wave += spatialize(ev, scene_seconds, sample_rate)
    if noise_rms > 0.0:
        if rng is None:
            raise ValidationError("noise_rms > 0 requires an rng")
        wave += noise_rms * rng.standard_normal(wave.shape)
    return wave, annotation


def assign_tracks(annotation: SceneAnnotation, num_tracks: int) -> np.ndarray:
    """Per label frame, the event index held by each track (-1 when free).

    Events grab the lowest track that is free over their entire span, in
    onset order; frame-level permutation-invariant training makes the
    particular assignment a canonical target rather than a constraint.
    """
    spans = []
    for i, ev in enumerate(annotation.events):
        first, last = label_frame_span(ev.onset, ev.offset)
        spans.append((first, min(last, annotation.n_frames), i))
    spans.sort(key=lambda s: (s[0], s[2]))

    track_event = np.full((annotation.n_frames, num_tracks), -1, dtype=int)
    for first, last, i in spans:
        window = track_event[first:last]
        free = np.nonzero(np.all(window < 0, axis=0))[0]
        if free.size == 0:
            raise CapacityError(
                f"event {i} needs a free track in frames [{first}, {last}) "
                f"but all {num_tracks} are taken"
            )
        window[:, free[0]] = i
    return track_event


@dataclass
class OracleTargets:
    """Track-wise training targets at label-frame rate.

    ``embeddings`` is (T, N, dim) and ``accdoa`` is (T, N, 3); inactive
    track-frames are all-zero in both. ``track_event`` maps (frame,
    track) to the owning event index, -1 when inactive.
    """

    embeddings: np.ndarray
    accdoa: np.ndarray
    track_event: np.ndarray
    event_embeddings: np.ndarray = field(repr=False, default=None)
    event_directions: np.ndarray = field(repr=False, default=None)


def oracle_targets(
    annotation: SceneAnnotation,
    provider: EmbeddingProvider,
    num_tracks: int,
) -> OracleTargets:
    """Build per-track oracle embeddings and coupled DOA vectors.

    Each event's embedding comes from the provider applied to its full
    clean (un-spatialized, gain-scaled) signal, so it is constant across
    the event's frames; the coupled DOA target is the unit direction.
    """
    track_event = assign_tracks(annotation, num_tracks)
    n_events = len(annotation.events)
    dim = provider.dim
    ev_emb = np.zeros((n_events, dim))
    ev_dir = np.zeros((n_events, 3))
    for i, ev in enumerate(annotation.events):
        ev_emb[i] = provider.audio_embed(ev.clean_wave(), annotation.sample_rate)
        ev_dir[i] = ev.direction

    return build_targets_from_events(track_event, ev_emb, ev_dir)


def build_targets_from_events(
    track_event: np.ndarray, event_embeddings: np.ndarray, event_directions: np.ndarray
) -> OracleTargets:
    """Materialize dense (T, N, .) targets from per-event data."""
    t_frames, num_tracks = track_event.shape
    dim = event_embeddings.shape[1] if event_embeddings.size else 0
    emb = np.zeros((t_frames, num_tracks, dim))
    acc = np.zeros((t_frames, num_tracks, 3))
    active = track_event >= 0
    if np.any(active):
        emb[active] = event_embeddings[track_event[active]]
        acc[active] = event_directions[track_event[active]]
    return OracleTargets(emb, acc, track_event, event_embeddings, event_directions)


def rotate_foa(
    wave: np.ndarray, annotation: SceneAnnotation, rotation_id: int
) -> tuple[np.ndarray, SceneAnnotation]:
    """Apply one of the 16 discrete FOA rotations to audio and labels.

    The W channel is untouched; the (X, Y, Z) channels and every event
    direction are transformed by the same signed permutation, so
    spatialization and rotation commute exactly.
    """
    mat = geometry.rotation_matrix(rotation_id)
    wave = np.asarray(wave)
    if wave.ndim != 2 or wave.shape[0] != 4:
        raise ValidationError(f"expected a (4, n) FOA waveform, got {wave.shape}")
    out = wave.copy()
    xyz = wave[[3, 1, 2], :]  # channel order -> (x, y, z) components
    rotated = mat @ xyz
    out[3], out[1], out[2] = rotated[0], rotated[1], rotated[2]

    new_events = []
    for ev in annotation.events:
        v = geometry.rotate_direction(rotation_id, ev.direction)
        az, el = geometry.cartesian_to_spherical(v)
        new_events.append(replace(ev, azimuth=az, elevation=el))
    return out, SceneAnnotation(new_events, annotation.scene_seconds, annotation.sample_rate)


@dataclass
class SceneParams:
    """Random-scene generation knobs for the synthetic corpus."""

    class_names: list[str]
    scene_seconds: float = 60.0
    max_polyphony: int = 2
    events_min: int = 6
    events_max: int = 10
    event_min_seconds: float = 0.5
    event_max_seconds: float = 4.0
    elevation_min: float = -60.0
    elevation_max: float = 60.0
    gain_min: float = 0.3
    gain_max: float = 0.9
    noise_rms: float = 0.05

    def validate(self) -> list[str]:
        problems = []
        if not self.class_names:
            problems.append("scene.class_names must not be empty")
        if self.events_min < 0 or self.events_max < self.events_min:
            problems.append("scene.events_min/events_max out of order")
        if not 0 < self.event_min_seconds <= self.event_max_seconds:
            problems.append("scene.event duration range invalid")
        if self.event_max_seconds > self.scene_seconds:
            problems.append("scene.event_max_seconds exceeds scene length")
        if self.max_polyphony < 1:
            problems.append("scene.max_polyphony must be >= 1")
        if not -90 <= self.elevation_min <= self.elevation_max <= 90:
            problems.append("scene.elevation range invalid")
        if not 0 < self.gain_min <= self.gain_max:
            problems.append("scene.gain range invalid")
        if self.noise_rms < 0:
            problems.append("scene.noise_rms must be >= 0")
        return problems


_PLACEMENT_ATTEMPTS = 200


def generate_scene(
    params: SceneParams, sample_rate: int, rng: np.random.Generator
) -> tuple[np.ndarray, SceneAnnotation]:
    """Draw a random scene honoring the polyphony cap.

    Events are placed by rejection sampling on their onset; if an event
    cannot be placed after a bounded number of attempts the scene is
    rejected with a SceneError rather than silently dropping events.
    """
    n_classes = len(params.class_names)
    n_events = int(rng.integers(params.events_min, params.events_max + 1))
    total_frames = n_label_frames(
        int(round(params.scene_seconds * sample_rate)), sample_rate
    )
    occupancy = np.zeros(total_frames, dtype=int)

    events: list[EventSpec] = []
    for _ in range(n_events):
        class_id = int(rng.integers(n_classes))
        duration = float(rng.uniform(params.event_min_seconds, params.event_max_seconds))
        duration = min(duration, params.scene_seconds)
        placed = False
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            onset = float(rng.uniform(0.0, params.scene_seconds - duration))
            first, last = label_frame_span(onset, onset + duration)
            last = min(last, total_frames)
            if np.all(occupancy[first:last] < params.max_polyphony):
                occupancy[first:last] += 1
                placed = True
                break
        if not placed:
            raise SceneError(
                f"could not place a {duration:.2f} s event under "
                f"max_polyphony={params.max_polyphony}"
            )
        source = sources.synth_class_source(
            class_id, n_classes, duration, sample_rate, rng
        )
        events.append(
            EventSpec(
                class_id=class_id,
                onset=onset,
                offset=onset + duration,
                azimuth=float(rng.uniform(-180.0, 180.0)),
                elevation=float(rng.uniform(params.elevation_min, params.elevation_max)),
                gain=float(rng.uniform(params.gain_min, params.gain_max)),
                source=source,
            )
        )

    return mix_scene(
        events,
        params.scene_seconds,
        sample_rate,
        noise_rms=params.noise_rms,
        rng=rng,
        max_polyphony=params.max_polyphony,
    )
