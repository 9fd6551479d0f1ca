"""Language-audio embedding providers and support-set construction.

The toolkit never runs a pretrained language-audio encoder itself.
Instead it talks to an ``EmbeddingProvider``:

* ``StubEmbeddingProvider`` - a deterministic stand-in for desk-scale
  work. Text embeddings are seeded unit Gaussians; audio embeddings are
  the matching class anchor plus a reproducible perturbation, where the
  class is recognised from the synthetic clip's spectral signature.
* ``FileEmbeddingProvider`` - replays precomputed embeddings from a
  sidecar table, so outputs of a real encoder can be injected without
  binding to any inference runtime.

A ``SupportSet`` holds one embedding per target class plus one for
background noise. Zero-shot supports come from text prompts (the bare
class name by default, "silent" for noise); few-shot supports are
renormalized means (prototypes) of per-class audio embeddings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import sources
from .errors import ValidationError

EMBED_DIM = 512
UNIT_ATOL = 1e-4
SILENT_PROMPT = "silent"
DEFAULT_PROMPT_TEMPLATE = "{name}"


def normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < eps:
        raise ValidationError("cannot normalize a (near-)zero embedding")
    return v / n


def cosine_similarity(a: np.ndarray, b: np.ndarray, eps: float = 1e-8) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.dot(a, b) / ((np.linalg.norm(a) + eps) * (np.linalg.norm(b) + eps)))


def _hash_seed(*parts: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        else:
            h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def stub_text_embed(text: str, seed: int = 0, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic unit embedding for a text prompt.

    Identical (text, seed) pairs give identical vectors across runs and
    platforms; distinct texts give independent unit Gaussians, which are
    nearly orthogonal at dim 512.
    """
    if not text:
        raise ValidationError("text prompt must be non-empty")
    rng = np.random.default_rng(_hash_seed("text", seed, text))
    return normalize(rng.standard_normal(dim))


class EmbeddingProvider(Protocol):
    """Minimal encoder surface the rest of the toolkit relies on."""

    dim: int

    def text_embed(self, text: str) -> np.ndarray: ...

    def audio_embed(
        self, wave: np.ndarray, sample_rate: int, key: str | None = None
    ) -> np.ndarray: ...


class StubEmbeddingProvider:
    """Deterministic joint text/audio embedding space over known classes.

    Args:
        class_names: vocabulary the stub can recognise in audio.
        seed: stream seed; all outputs are pure functions of (seed, input).
        noise_level: perturbation scale of audio embeddings around their
            class anchor (0 collapses audio embeddings onto the anchors).
        orthogonalize: replace the class + "silent" anchors with an
            orthonormalized version (QR), for controlled experiments.
    """

    def __init__(
        self,
        class_names: Sequence[str],
        seed: int = 0,
        dim: int = EMBED_DIM,
        noise_level: float = 0.1,
        orthogonalize: bool = False,
        sample_rate: int = 24000,
    ):
        if not class_names:
            raise ValidationError("stub provider needs at least one class name")
        if len(set(class_names)) != len(class_names):
            raise ValidationError("class names must be unique")
        if noise_level < 0:
            raise ValidationError("noise_level must be >= 0")
        self.class_names = list(class_names)
        self.seed = seed
        self.dim = dim
        self.noise_level = noise_level
        self.sample_rate = sample_rate

        anchors = np.stack(
            [stub_text_embed(n, seed, dim) for n in self.class_names]
            + [stub_text_embed(SILENT_PROMPT, seed, dim)]
        )
        if orthogonalize:
            q, r = np.linalg.qr(anchors.T)
            anchors = (q * np.sign(np.diag(r))).T
        self._anchors = anchors  # (C + 1, dim); last row is the noise anchor

    def anchor(self, class_id: int) -> np.ndarray:
        if not 0 <= class_id < len(self.class_names):
            raise ValidationError(
                f"class_id {class_id} out of range [0, {len(self.class_names)})"
            )
        return self._anchors[class_id].copy()

    @property
    def noise_anchor(self) -> np.ndarray:
        return self._anchors[-1].copy()

    def text_embed(self, text: str) -> np.ndarray:
        if text in self.class_names:
            return self.anchor(self.class_names.index(text))
        if text == SILENT_PROMPT:
            return self.noise_anchor
        return stub_text_embed(text, self.seed, self.dim)

    def _perturb(self, base: np.ndarray, level: float, variation_seed: int) -> np.ndarray:
        if level == 0.0:
            return base
        rng = np.random.default_rng(_hash_seed("audio", self.seed, variation_seed))
        # unit-norm perturbation direction, so `level` is the relative
        # perturbation size independent of the embedding dimension
        direction = normalize(rng.standard_normal(self.dim))
        return normalize(base + level * direction)

    def stub_audio_embed(
        self, class_id: int, variation_seed: int, noise_level: float | None = None
    ) -> np.ndarray:
        """Class anchor plus a seeded unit-direction perturbation, renormalized."""
        level = self.noise_level if noise_level is None else noise_level
        if level < 0:
            raise ValidationError("noise_level must be >= 0")
        return self._perturb(self.anchor(class_id), level, variation_seed)

    def audio_embed(
        self, wave: np.ndarray, sample_rate: int, key: str | None = None
    ) -> np.ndarray:
        """Embed a clip by recognising its synthetic class signature.

        Clips without a recognisable class (noise, silence) land near the
        "silent" anchor, mimicking how a real encoder keeps background
        audio away from the event classes.
        """
        wave = np.asarray(wave, dtype=float)
        if wave.ndim != 1:
            raise ValidationError("audio_embed expects a single channel")
        class_id = sources.classify_wave(wave, sample_rate, len(self.class_names))
        variation = _hash_seed("wave", wave)
        if class_id is None:
            return self._perturb(self.noise_anchor, self.noise_level, variation)
        return self.stub_audio_embed(class_id, variation)


class FileEmbeddingProvider:
    """Replays precomputed embeddings keyed by prompt text or clip path."""

    def __init__(self, table: dict[str, np.ndarray]):
        if not table:
            raise ValidationError("embedding table is empty")
        dims = {v.shape[-1] for v in table.values()}
        if len(dims) != 1:
            raise ValidationError(f"inconsistent embedding dims in table: {sorted(dims)}")
        self.table = {k: normalize(v) for k, v in table.items()}
        self.dim = dims.pop()

    def _lookup(self, key: str) -> np.ndarray:
        if key not in self.table:
            raise ValidationError(f"no precomputed embedding for key {key!r}")
        return self.table[key].copy()

    def text_embed(self, text: str) -> np.ndarray:
        return self._lookup(text)

    def audio_embed(
        self, wave: np.ndarray, sample_rate: int, key: str | None = None
    ) -> np.ndarray:
        if key is None:
            raise ValidationError(
                "file-based provider needs the clip key that indexes its table"
            )
        return self._lookup(key)


@dataclass
class SupportSet:
    """Per-class support embeddings plus one background-noise embedding."""

    class_names: list[str]
    class_embeddings: np.ndarray  # (C, dim)
    noise_embedding: np.ndarray  # (dim,)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.class_embeddings = np.asarray(self.class_embeddings, dtype=float)
        self.noise_embedding = np.asarray(self.noise_embedding, dtype=float)
        if len(self.class_names) < 1:
            raise ValidationError("support set needs at least one class")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError("support class names must be unique")
        if self.class_embeddings.shape != (len(self.class_names), self.dim):
            raise ValidationError(
                f"class embeddings shape {self.class_embeddings.shape} does not match "
                f"{len(self.class_names)} classes"
            )
        norms = np.linalg.norm(self.class_embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_ATOL):
            raise ValidationError("support embeddings must be unit norm")
        if abs(np.linalg.norm(self.noise_embedding) - 1.0) > UNIT_ATOL:
            raise ValidationError("noise embedding must be unit norm")

    @property
    def dim(self) -> int:
        return self.noise_embedding.shape[-1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def build_support_zero(
    class_names: Sequence[str],
    provider: EmbeddingProvider,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
) -> SupportSet:
    """Zero-shot support set: one text-prompt embedding per class."""
    if not class_names:
        raise ValidationError("need at least one class name")
    embeddings = np.stack(
        [provider.text_embed(prompt_template.format(name=n)) for n in class_names]
    )
    noise = provider.text_embed(SILENT_PROMPT)
    return SupportSet(
        list(class_names),
        embeddings,
        noise,
        provenance={"mode": "zero", "prompt_template": prompt_template},
    )


def build_support_few(
    class_names: Sequence[str],
    class_shots: Sequence[Sequence[np.ndarray]],
    noise_shots: Sequence[np.ndarray],
    provider: EmbeddingProvider,
    sample_rate: int,
    shot_keys: Sequence[Sequence[str]] | None = None,
    noise_keys: Sequence[str] | None = None,
) -> SupportSet:
    """Few-shot support set: renormalized mean (prototype) per class.

    ``class_shots[c]`` holds the K audio clips of class c (K may differ
    per class but must be >= 1); ``noise_shots`` are clips without any
    target class, prototyped the same way. ``shot_keys``/``noise_keys``
    are passed through to providers that index clips by key.
    """
    if len(class_shots) != len(class_names):
        raise ValidationError("one shot list per class required")
    if len(noise_shots) == 0:
        raise ValidationError("few-shot support needs at least one background clip")

    def _proto(clips, keys, what):
        if len(clips) == 0:
            raise ValidationError(f"empty shot list for {what}")
        embs = [
            provider.audio_embed(np.asarray(c, dtype=float), sample_rate,
                                 key=None if keys is None else keys[i])
            for i, c in enumerate(clips)
        ]
        return normalize(np.mean(embs, axis=0))

    protos = np.stack(
        [
            _proto(clips, None if shot_keys is None else shot_keys[c], f"class {class_names[c]!r}")
            for c, clips in enumerate(class_shots)
        ]
    )
    noise = _proto(noise_shots, noise_keys, "background noise")
    shots_per_class = [len(c) for c in class_shots]
    return SupportSet(
        list(class_names),
        protos,
        noise,
        provenance={"mode": "few", "shots": shots_per_class},
    )
