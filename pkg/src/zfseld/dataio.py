"""File formats: WAV audio, annotation CSV, embedding tables, manifests.

Formats are deliberately boring and text-first:

* audio: RIFF WAV, 4 channels, 16-bit PCM or 32-bit float;
* annotations/predictions: CSV with header
  ``frame,class,source,azimuth,elevation`` (100 ms label frames, degrees);
* embedding tables: one record per line, ``<key> TAB <decimals>``, with
  ``#``-prefixed comment lines; support sets reuse the same table format
  with ``class:<name>`` keys plus a ``noise`` record and JSON provenance
  comments;
* manifests: JSON listing the generated scene files with seeds and
  SHA-256 checksums.

Float fields in tables use ``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .embeddings import SupportSet
from .errors import FormatError, ValidationError
from .geometry import spherical_to_cartesian, wrap_azimuth
from .metrics import FrameLabels

CSV_HEADER = "frame,class,source,azimuth,elevation"


# ---- WAV ----------------------------------------------------------------------


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file as (channels, samples) float64 in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        wave = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        wave = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        wave = data.astype(np.float64)
    else:
        raise FormatError(f"unsupported WAV sample format {data.dtype} in {path}")
    return wave.T, int(rate)


def write_wav(path, wave: np.ndarray, sample_rate: int) -> None:
    """Write (channels, samples) audio as 32-bit float WAV."""
    wave = np.asarray(wave)
    if wave.ndim != 2:
        raise ValidationError(f"expected (channels, samples), got shape {wave.shape}")
    wavfile.write(path, sample_rate, np.ascontiguousarray(wave.T, dtype=np.float32))


# ---- annotation / prediction CSV ----------------------------------------------


@dataclass
class AnnotationRecord:
    """One active (frame, class, source) with its direction in degrees."""

    frame: int
    class_id: int
    source_id: int
    azimuth: float
    elevation: float

    def validate(self) -> None:
        if self.frame < 0 or self.class_id < 0 or self.source_id < 0:
            raise FormatError("frame, class and source must be non-negative")
        if not -180.0 <= self.azimuth < 180.0:
            raise FormatError(f"azimuth {self.azimuth} outside [-180, 180)")
        if not -90.0 <= self.elevation <= 90.0:
            raise FormatError(f"elevation {self.elevation} outside [-90, 90]")


def _format_angle(value: float, is_azimuth: bool) -> str:
    v = round(value, 4)
    if is_azimuth:
        v = wrap_azimuth(v)
    return f"{v:.4f}"


def write_annotation_csv(path, records: list[AnnotationRecord]) -> None:
    lines = [CSV_HEADER]
    for r in sorted(records, key=lambda r: (r.frame, r.class_id, r.source_id)):
        lines.append(
            f"{r.frame},{r.class_id},{r.source_id},"
            f"{_format_angle(r.azimuth, True)},{_format_angle(r.elevation, False)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_annotation_csv(path) -> list[AnnotationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if lineno == 1:
                if line != CSV_HEADER:
                    raise FormatError(
                        f"{path}:1: expected header {CSV_HEADER!r}, got {line!r}"
                    )
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            try:
                rec = AnnotationRecord(
                    frame=int(parts[0]),
                    class_id=int(parts[1]),
                    source_id=int(parts[2]),
                    azimuth=float(parts[3]),
                    elevation=float(parts[4]),
                )
                rec.validate()
            except (ValueError, FormatError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec)
    return records


def records_to_frame_labels(records: list[AnnotationRecord]) -> FrameLabels:
    labels = FrameLabels()
    for r in records:
        labels.add(r.frame, r.class_id, r.source_id, spherical_to_cartesian(r.azimuth, r.elevation))
    return labels


# ---- embedding tables ----------------------------------------------------------


def write_embedding_table(path, table: dict[str, np.ndarray], comments: list[str] | None = None) -> None:
    lines = [f"# {c}" for c in (comments or [])]
    for key, vec in table.items():
        if "\t" in key or "\n" in key:
            raise ValidationError(f"embedding key {key!r} contains tab/newline")
        vec = np.asarray(vec, dtype=float).ravel()
        lines.append(key + "\t" + " ".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embedding_table(path) -> tuple[dict[str, np.ndarray], list[str]]:
    table: dict[str, np.ndarray] = {}
    comments: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if "\t" not in line:
                raise FormatError(f"{path}:{lineno}: expected '<key> TAB <values>'")
            key, values = line.split("\t", 1)
            if key in table:
                raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                vec = np.array([float(v) for v in values.split()], dtype=float)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad float: {exc}") from exc
            if vec.size == 0:
                raise FormatError(f"{path}:{lineno}: empty embedding")
            table[key] = vec
    return table, comments


# ---- support sets ---------------------------------------------------------------


def save_support(path, support: SupportSet) -> None:
    comments = [
        "zfseld-support-v1",
        "meta=" + json.dumps(support.provenance, sort_keys=True),
        "classes=" + json.dumps(support.class_names),
    ]
    table = {
        f"class:{name}": support.class_embeddings[i]
        for i, name in enumerate(support.class_names)
    }
    table["noise"] = support.noise_embedding
    write_embedding_table(path, table, comments)


def load_support(path) -> SupportSet:
    table, comments = load_embedding_table(path)
    meta: dict = {}
    class_names: list[str] | None = None
    for c in comments:
        if c.startswith("meta="):
            meta = json.loads(c[len("meta="):])
        elif c.startswith("classes="):
            class_names = json.loads(c[len("classes="):])
    if class_names is None:
        class_names = [k[len("class:"):] for k in table if k.startswith("class:")]
    if "noise" not in table:
        raise FormatError(f"support file {path} has no 'noise' record")
    try:
        embeddings = np.stack([table[f"class:{n}"] for n in class_names])
    except KeyError as exc:
        raise FormatError(f"support file {path} is missing {exc.args[0]!r}") from exc
    return SupportSet(class_names, embeddings, table["noise"], provenance=meta)


# ---- manifests ------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
