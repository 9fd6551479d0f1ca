"""End-to-end drivers: corpus simulation, training, inference, evaluation.

All randomness flows from the single root seed in the run configuration
through named sub-streams (one per scene, one per network init, one per
training iteration, ...), so every stage is reproducible independently
of scheduling or resumption.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import dataio, decoder, geometry, scenes
from .config import RunConfig
from .embeddings import (
    FileEmbeddingProvider,
    StubEmbeddingProvider,
    SupportSet,
    _hash_seed,
    build_support_few,
    build_support_zero,
)
from .errors import (
    CapacityError,
    CompatibilityError,
    FormatError,
    SceneError,
    TrainingDivergenceError,
    ValidationError,
)
from .features import extract_features, segment, segment_valid_frames
from .losses import pit_loss, pit_loss_grad
from .metrics import MetricsReport, evaluate_frames
from .network import EmbedAccdoaNet, load_checkpoint, save_checkpoint
from .optim import Adam


def substream_rng(root_seed: int, *names) -> np.random.Generator:
    """Independent generator for a named sub-stream of the root seed."""
    return np.random.default_rng(_hash_seed("rng", root_seed, *names))


def substream_seed(root_seed: int, *names) -> int:
    return _hash_seed("rng", root_seed, *names)


def provider_from_config(config: RunConfig):
    emb = config.embedding
    if emb.provider == "stub":
        return StubEmbeddingProvider(
            config.scene.class_names,
            seed=emb.stub_seed,
            dim=emb.dim,
            noise_level=emb.stub_noise_level,
            orthogonalize=emb.orthogonalize,
            sample_rate=config.features.sample_rate,
        )
    table, _ = dataio.load_embedding_table(emb.table_path)
    provider = FileEmbeddingProvider(table)
    if provider.dim != emb.dim:
        raise CompatibilityError(
            f"embedding table dim {provider.dim} != configured dim {emb.dim}"
        )
    return provider


def annotation_records(annotation: scenes.SceneAnnotation) -> list[dataio.AnnotationRecord]:
    records = []
    for frame, entries in annotation.frame_table().items():
        for event_idx, class_id, az, el in entries:
            records.append(
                dataio.AnnotationRecord(frame, class_id, event_idx, az, el)
            )
    return records


# ---- simulate ------------------------------------------------------------------


def simulate_corpus(config: RunConfig, out_dir, n_scenes: int) -> dict:
    """Generate scene WAV/CSV/embedding triples plus a checksum manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    provider = provider_from_config(config)
    sr = config.features.sample_rate

    entries = []
    for i in range(n_scenes):
        rng = substream_rng(config.seed, "scene", i)
        try:
            wave, annotation = scenes.generate_scene(config.scene, sr, rng)
        except SceneError as exc:
            raise SceneError(f"scene {i}: {exc}") from exc
        stem = f"scene{i:04d}"
        wav_path = out_dir / f"{stem}.wav"
        csv_path = out_dir / f"{stem}.csv"
        emb_path = out_dir / f"{stem}_embeddings.tsv"

        dataio.write_wav(wav_path, wave, sr)
        dataio.write_annotation_csv(csv_path, annotation_records(annotation))
        table = {
            f"event{j}": provider.audio_embed(ev.clean_wave(), sr)
            for j, ev in enumerate(annotation.events)
        }
        dataio.write_embedding_table(
            emb_path, table, comments=[f"oracle embeddings for {stem}"]
        )
        entries.append(
            {
                "index": i,
                "wav": wav_path.name,
                "csv": csv_path.name,
                "embeddings": emb_path.name,
                "seed": substream_seed(config.seed, "scene", i),
                "sha256_wav": dataio.sha256_file(wav_path),
                "sha256_csv": dataio.sha256_file(csv_path),
                "n_events": len(annotation.events),
            }
        )

    manifest = {
        "version": 1,
        "seed": config.seed,
        "sample_rate": sr,
        "class_names": list(config.scene.class_names),
        "scenes": entries,
    }
    dataio.save_manifest(out_dir / "manifest.json", manifest)
    return manifest


# ---- training data -------------------------------------------------------------


@dataclass
class SceneData:
    """Lazily-read audio plus precomputed oracle lookup tables."""

    wav_path: Path
    track_event: np.ndarray  # (n_label_frames, n_tracks) event index or -1
    event_embeddings: np.ndarray  # (n_events, dim)
    event_directions: np.ndarray  # (n_events, 3)
    n_samples: int

    _wave = None

    def wave(self) -> np.ndarray:
        if self._wave is None:
            _rate, data = wavfile.read(self.wav_path, mmap=True)
            self._wave = data  # (samples, 4), float32 memmap
        return self._wave


def _events_from_records(records: list[dataio.AnnotationRecord]):
    """Reconstruct per-event span/direction tables from CSV rows."""
    by_source: dict[int, list[dataio.AnnotationRecord]] = {}
    for r in records:
        by_source.setdefault(r.source_id, []).append(r)
    events = []
    for source_id in sorted(by_source):
        rows = by_source[source_id]
        classes = {r.class_id for r in rows}
        if len(classes) > 1:
            raise FormatError(f"source {source_id} has inconsistent classes {classes}")
        frames = sorted(r.frame for r in rows)
        events.append(
            {
                "source_id": source_id,
                "class_id": rows[0].class_id,
                "first": frames[0],
                "last": frames[-1] + 1,
                "direction": geometry.spherical_to_cartesian(rows[0].azimuth, rows[0].elevation),
            }
        )
    return events


def load_scene_data(
    scene_dir: Path, entry: dict, n_tracks: int, sample_rate: int, dim: int
) -> SceneData:
    wav_path = scene_dir / entry["wav"]
    records = dataio.read_annotation_csv(scene_dir / entry["csv"])
    table, _ = dataio.load_embedding_table(scene_dir / entry["embeddings"])
    events = _events_from_records(records)

    rate, data = wavfile.read(wav_path, mmap=True)
    if rate != sample_rate:
        raise CompatibilityError(f"{wav_path}: sample rate {rate} != {sample_rate}")
    n_samples = data.shape[0]

    n_frames = scenes.n_label_frames(n_samples, sample_rate)
    track_event = np.full((n_frames, n_tracks), -1, dtype=np.int32)
    # lowest free track over the whole event span, in onset order
    for ev in sorted(events, key=lambda e: (e["first"], e["source_id"])):
        window = track_event[ev["first"] : ev["last"]]
        free = np.nonzero(np.all(window < 0, axis=0))[0]
        if free.size == 0:
            raise CapacityError(
                f"{wav_path}: event {ev['source_id']} does not fit the "
                f"configured {n_tracks} tracks"
            )
        window[:, free[0]] = ev["source_id"]

    n_events = max((e["source_id"] for e in events), default=-1) + 1
    emb = np.zeros((n_events, dim))
    dirs = np.zeros((n_events, 3))
    for ev in events:
        key = f"event{ev['source_id']}"
        if key not in table:
            raise FormatError(f"{entry['embeddings']}: missing oracle embedding {key!r}")
        if table[key].shape[0] != dim:
            raise CompatibilityError(
                f"{entry['embeddings']}: {key} has dim {table[key].shape[0]}, expected {dim}"
            )
        emb[ev["source_id"]] = table[key]
        dirs[ev["source_id"]] = ev["direction"]

    return SceneData(wav_path, track_event, emb, dirs, n_samples)


class TrainDataset:
    """Random segment sampler over a simulated corpus."""

    def __init__(self, config: RunConfig, data_dir):
        self.config = config
        self.data_dir = Path(data_dir)
        manifest = dataio.load_manifest(self.data_dir / "manifest.json")
        if manifest.get("sample_rate") != config.features.sample_rate:
            raise CompatibilityError(
                "manifest sample rate does not match the run configuration"
            )
        self.scenes = [
            load_scene_data(
                self.data_dir,
                entry,
                config.network.n_tracks,
                config.features.sample_rate,
                config.embedding.dim,
            )
            for entry in manifest["scenes"]
        ]
        if not self.scenes:
            raise ValidationError("manifest lists no scenes")
        self.manifest = manifest

    def sample_batch(
        self,
        rng: np.random.Generator,
        batch_size: int,
        scene_indices: list[int],
        augment: bool,
    ):
        fc = self.config.features
        nc = self.config.network
        t_out = nc.out_frames(fc.segment_frames)
        tp = nc.total_time_pool
        fpl = fc.frames_per_label
        dim = self.config.embedding.dim
        n_tracks = nc.n_tracks

        feats = np.empty((batch_size, 7, fc.n_bins, fc.segment_frames), dtype=np.float32)
        tgt_emb = np.zeros((batch_size, t_out, n_tracks, dim))
        tgt_acc = np.zeros((batch_size, t_out, n_tracks, 3))

        for b in range(batch_size):
            scene = self.scenes[scene_indices[int(rng.integers(len(scene_indices)))]]
            n_frames_scene = fc.n_frames(scene.n_samples)
            start = int(rng.integers(0, n_frames_scene - fc.segment_frames + 1))
            crop = np.array(
                scene.wave()[
                    start * fc.hop : start * fc.hop + fc.segment_samples(), :
                ],
                dtype=np.float64,
            ).T

            dirs = scene.event_directions
            if augment:
                rot = int(rng.integers(geometry.N_FOA_ROTATIONS))
                if rot != 0:
                    mat = geometry.rotation_matrix(rot)
                    crop[[3, 1, 2], :] = mat @ crop[[3, 1, 2], :]
                    dirs = dirs @ mat.T

            feats[b] = extract_features(crop, fc)

            centers = start + tp * np.arange(t_out) + tp // 2
            labels = np.minimum(centers // fpl, scene.track_event.shape[0] - 1)
            te = scene.track_event[labels]  # (t_out, n_tracks)
            active = te >= 0
            if np.any(active):
                tgt_emb[b][active] = scene.event_embeddings[te[active]]
                tgt_acc[b][active] = dirs[te[active]]
        return feats, tgt_emb, tgt_acc


# ---- training loop ---------------------------------------------------------------


def train_model(
    config: RunConfig,
    data_dir,
    out_checkpoint,
    resume=None,
    log_path=None,
    progress=None,
) -> dict:
    """Train on a simulated corpus; returns a small summary dict.

    Checkpoints (with optimizer state) are written at every validation
    interval and at the end; on divergence the last finite checkpoint
    stays on disk and a TrainingDivergenceError is raised.
    """
    tc = config.train
    dataset = TrainDataset(config, data_dir)
    n_scenes = len(dataset.scenes)
    n_val = min(tc.val_scenes, n_scenes - 1)
    train_idx = list(range(n_scenes - n_val))
    val_idx = list(range(n_scenes - n_val, n_scenes)) if n_val else train_idx

    if resume is not None:
        net, opt_state, start_iter = load_checkpoint(resume)
        if net.config != config.network:
            raise CompatibilityError(
                "checkpoint network configuration differs from the run configuration"
            )
        if net.n_bins != config.features.n_bins:
            raise CompatibilityError("checkpoint feature bins differ from configuration")
        opt = Adam(weight_decay=tc.weight_decay)
        opt.load_state_arrays(opt_state)
    else:
        net = EmbedAccdoaNet(
            config.network, config.features.n_bins, substream_rng(config.seed, "init")
        )
        opt = Adam(weight_decay=tc.weight_decay)
        start_iter = 0

    schedule = tc.schedule()
    val_batches = [
        dataset.sample_batch(
            substream_rng(config.seed, "valbatch", k), tc.batch_size, val_idx, False
        )
        for k in range(tc.val_batches)
    ]

    def batch_loss_and_grads(batch, want_grads: bool):
        feats, tgt_emb, tgt_acc = batch
        n_valid = config.features.segment_frames
        emb, acc = net.forward(feats, n_valid_frames=n_valid)
        bt = emb.shape[0] * emb.shape[1]
        o_emb = tgt_emb.reshape(bt, *tgt_emb.shape[2:])
        o_acc = tgt_acc.reshape(bt, *tgt_acc.shape[2:])
        p_emb = emb.reshape(bt, *emb.shape[2:]).astype(np.float64)
        p_acc = acc.reshape(bt, *acc.shape[2:]).astype(np.float64)
        if not want_grads:
            loss, _ = pit_loss(o_emb, o_acc, p_emb, p_acc, config.loss)
            return loss, None, None
        loss, _, d_emb, d_acc = pit_loss_grad(o_emb, o_acc, p_emb, p_acc, config.loss)
        return loss, d_emb.reshape(emb.shape), d_acc.reshape(acc.shape)

    def validation_loss() -> float:
        return float(np.mean([batch_loss_and_grads(b, False)[0] for b in val_batches]))

    log_rows = []
    running: list[float] = []
    out_checkpoint = Path(out_checkpoint)
    out_checkpoint.parent.mkdir(parents=True, exist_ok=True)

    for it in range(start_iter + 1, tc.iterations + 1):
        lr = schedule.lr(it)
        batch = dataset.sample_batch(
            substream_rng(config.seed, "batch", it), tc.batch_size, train_idx, tc.rotation_augment
        )
        loss, d_emb, d_acc = batch_loss_and_grads(batch, True)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(
                f"non-finite loss at iteration {it} (lr={lr:.3g}); "
                f"last checkpoint kept at {out_checkpoint}"
            )
        net.zero_grad()
        net.backward(d_emb, d_acc)
        opt.step(net.named_params(), lr)
        running.append(loss)

        if it % tc.val_interval == 0 or it == tc.iterations:
            val_loss = validation_loss()
            train_loss = float(np.mean(running)) if running else float("nan")
            running.clear()
            log_rows.append((it, train_loss, val_loss))
            save_checkpoint(out_checkpoint, net, opt.state_arrays(), iteration=it)
            if progress is not None:
                progress(it, train_loss, val_loss, lr)

    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "train_loss", "val_loss"])
            writer.writerows(log_rows)

    return {
        "iterations": tc.iterations,
        "final_train_loss": log_rows[-1][1] if log_rows else None,
        "final_val_loss": log_rows[-1][2] if log_rows else None,
        "checkpoint": str(out_checkpoint),
        "log": [list(r) for r in log_rows],
    }


# ---- inference --------------------------------------------------------------------


def infer_scene(
    config: RunConfig,
    net: EmbedAccdoaNet,
    support: SupportSet,
    wave: np.ndarray,
    sample_rate: int,
    provider=None,
    forward_chunk: int = 8,
) -> list[dataio.AnnotationRecord]:
    """Decode one multichannel recording into prediction records."""
    fc = config.features
    dc = config.decoder
    if sample_rate != fc.sample_rate:
        raise CompatibilityError(
            f"audio sample rate {sample_rate} != configured {fc.sample_rate} "
            "(resampling is out of scope)"
        )
    if support.dim != net.config.embed_dim:
        raise CompatibilityError(
            f"support dim {support.dim} != checkpoint embedding dim {net.config.embed_dim}"
        )
    if dc.use_clap_combination and provider is None:
        raise CompatibilityError("single-source override requires an embedding provider")

    feats = extract_features(np.asarray(wave, dtype=float), fc)
    segs = segment(feats, fc.segment_frames, fc.segment_shift)
    valids = segment_valid_frames(feats.shape[-1], fc.segment_frames, fc.segment_shift)

    emb_parts, acc_parts = [], []
    for i in range(0, len(segs), forward_chunk):
        chunk = np.stack(segs[i : i + forward_chunk]).astype(np.float32)
        emb, acc = net.forward(chunk, n_valid_frames=np.array(valids[i : i + forward_chunk]))
        emb_parts.append(emb)
        acc_parts.append(acc)
    emb_all = np.concatenate(emb_parts)
    acc_all = np.concatenate(acc_parts)

    fpl = fc.frames_per_label
    if fc.segment_shift % fpl != 0:
        raise ValidationError("segment_shift must be a multiple of the label frame length")
    lbl_shift = fc.segment_shift // fpl
    total_labels = scenes.n_label_frames(np.asarray(wave).shape[-1], sample_rate)
    n_seg = len(segs)
    seg_samples = fc.segment_samples()

    records = []
    for s in range(n_seg):
        clap_embedding = None
        if dc.use_clap_combination:
            lo = s * fc.segment_shift * fc.hop
            seg_wave = np.asarray(wave, dtype=float)[0, lo : lo + seg_samples]
            clap_embedding = provider.audio_embed(seg_wave, sample_rate)
        dets = decoder.decode_segment(
            emb_all[s].astype(np.float64),
            acc_all[s].astype(np.float64),
            support,
            dc,
            seg_frames=fc.segment_frames,
            frames_per_label=fpl,
            time_pool=config.network.total_time_pool,
            clap_embedding=clap_embedding,
        )
        for det in dets:
            if det.frame >= lbl_shift and s != n_seg - 1:
                continue  # owned by the next segment
            frame = s * lbl_shift + det.frame
            if frame >= total_labels:
                continue
            az, el = geometry.cartesian_to_spherical(det.doa)
            records.append(
                dataio.AnnotationRecord(frame, det.class_id, det.track, az, el)
            )
    return records


# ---- evaluation --------------------------------------------------------------------


def evaluate_records(
    ref_records: list[dataio.AnnotationRecord],
    pred_records: list[dataio.AnnotationRecord],
) -> MetricsReport:
    return evaluate_frames(
        dataio.records_to_frame_labels(ref_records),
        dataio.records_to_frame_labels(pred_records),
    )


# ---- support construction -----------------------------------------------------------


def support_from_clips(
    config: RunConfig,
    class_names: list[str],
    clip_paths: dict[str, list[str]],
    noise_paths: list[str],
) -> SupportSet:
    """Few-shot support from per-class audio clip files."""
    provider = provider_from_config(config)
    missing = {
        name: [p for p in clip_paths.get(name, []) if not Path(p).exists()]
        for name in class_names
    }
    missing = {k: v for k, v in missing.items() if v or not clip_paths.get(k)}
    if missing:
        detail = "; ".join(
            f"{name}: {'no clips listed' if not clip_paths.get(name) else ', '.join(map(str, paths))}"
            for name, paths in missing.items()
        )
        raise ValidationError(f"missing few-shot clips: {detail}")
    bad_noise = [p for p in noise_paths if not Path(p).exists()]
    if bad_noise:
        raise ValidationError(f"missing background clips: {', '.join(map(str, bad_noise))}")

    def _load(path):
        wave, rate = dataio.read_wav(path)
        if rate != config.features.sample_rate:
            raise CompatibilityError(
                f"{path}: sample rate {rate} != configured {config.features.sample_rate}"
            )
        return wave[0]

    shots = [[_load(p) for p in clip_paths[name]] for name in class_names]
    shot_keys = [[str(p) for p in clip_paths[name]] for name in class_names]
    noise = [_load(p) for p in noise_paths]
    noise_keys = [str(p) for p in noise_paths]
    return build_support_few(
        class_names,
        shots,
        noise,
        provider,
        config.features.sample_rate,
        shot_keys=shot_keys,
        noise_keys=noise_keys,
    )


def support_zero_from_config(config: RunConfig, class_names: list[str]) -> SupportSet:
    provider = provider_from_config(config)
    return build_support_zero(class_names, provider, config.embedding.prompt_template)
