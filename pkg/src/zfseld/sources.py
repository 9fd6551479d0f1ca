"""Synthetic source material for desk-scale experiments.

Each synthetic class is a tone burst at a class-specific carrier
frequency (geometrically spaced so neighbouring classes stay well
separated), with a short attack/release envelope, slow amplitude
modulation, and a small per-event detune. The spectral signature is what
lets the deterministic embedding stub recognise which class produced a
clip, mirroring how a pretrained audio encoder recognises real events.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

FREQ_LO = 400.0
FREQ_HI_FRACTION = 0.33  # of the sample rate
DETUNE_MAX = 0.01
CLASSIFY_BAND = 0.06  # half-width of the matched band, relative to carrier
NOISE_SHARE_THRESHOLD = 0.2


def class_frequencies(n_classes: int, sample_rate: int = 24000) -> np.ndarray:
    """Carrier frequency per class, geometrically spaced."""
    if n_classes < 1:
        raise ValidationError("need at least one class")
    hi = FREQ_HI_FRACTION * sample_rate
    if n_classes == 1:
        return np.array([np.sqrt(FREQ_LO * hi)])
    ratio = (hi / FREQ_LO) ** (1.0 / (n_classes - 1))
    return FREQ_LO * ratio ** np.arange(n_classes)


def synth_class_source(
    class_id: int,
    n_classes: int,
    duration: float,
    sample_rate: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mono tone burst for one class, unit peak envelope, float64."""
    freqs = class_frequencies(n_classes, sample_rate)
    if not 0 <= class_id < n_classes:
        raise ValidationError(f"class_id {class_id} out of range [0, {n_classes})")
    n = max(int(round(duration * sample_rate)), 1)
    t = np.arange(n) / sample_rate

    carrier = freqs[class_id] * (1.0 + rng.uniform(-DETUNE_MAX, DETUNE_MAX))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    tone = np.sin(2.0 * np.pi * carrier * t + phase)

    # slow tremolo so events are not perfectly stationary
    am_rate = rng.uniform(1.0, 6.0)
    am_depth = rng.uniform(0.0, 0.3)
    tone *= 1.0 - am_depth * 0.5 * (1.0 + np.sin(2.0 * np.pi * am_rate * t))

    attack = min(int(0.01 * sample_rate), n // 2)
    release = min(int(0.05 * sample_rate), n // 2)
    env = np.ones(n)
    if attack > 0:
        env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    if release > 0:
        env[-release:] = np.linspace(1.0, 0.0, release)
    return tone * env


def synth_noise_clip(
    duration: float, sample_rate: int, rng: np.random.Generator, rms: float = 0.1
) -> np.ndarray:
    """Wideband Gaussian noise clip (a background / no-event sample)."""
    n = max(int(round(duration * sample_rate)), 1)
    return rng.standard_normal(n) * rms


def band_energy_shares(wave: np.ndarray, sample_rate: int, n_classes: int) -> np.ndarray:
    """Fraction of total spectral energy near each class carrier."""
    wave = np.asarray(wave, dtype=float)
    spec = np.abs(np.fft.rfft(wave)) ** 2
    total = float(spec.sum())
    if total <= 0.0:
        return np.zeros(n_classes)
    freqs = np.fft.rfftfreq(wave.shape[0], d=1.0 / sample_rate)
    shares = np.empty(n_classes)
    for c, fc in enumerate(class_frequencies(n_classes, sample_rate)):
        lo, hi = fc * (1.0 - CLASSIFY_BAND), fc * (1.0 + CLASSIFY_BAND)
        shares[c] = spec[(freqs >= lo) & (freqs <= hi)].sum() / total
    return shares


def classify_wave(wave: np.ndarray, sample_rate: int, n_classes: int) -> int | None:
    """Best-matching synthetic class for a clip, or None for noise/silence.

    A clip counts as a class only when the energy share in that class's
    band clears ``NOISE_SHARE_THRESHOLD``; flat-spectrum or silent input
    falls through to None.
    """
    shares = band_energy_shares(wave, sample_rate, n_classes)
    best = int(np.argmax(shares))
    if shares[best] < NOISE_SHARE_THRESHOLD:
        return None
    return best
