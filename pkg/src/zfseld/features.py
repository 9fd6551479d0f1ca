"""Model input features from 4-channel first-order ambisonics audio.

The front end is deliberately plain: per-channel amplitude spectrograms
plus inter-channel phase differences (IPD) of the three directional
channels against the omnidirectional reference channel W, chopped into
fixed-length overlapping segments.

Feature tensor layout is (M, F, T): M = 7 feature channels
(|W|, |Y|, |Z|, |X|, IPD_Y, IPD_Z, IPD_X), F frequency bins, T frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

#: magnitude below which the reference phase is considered undefined
IPD_REF_EPS = 1e-12


@dataclass
class FeatureConfig:
    """STFT and segmentation parameters.

    Defaults: 24 kHz audio, 20 ms frames (480 samples, zero-padded to a
    512-point FFT), 10 ms hop, 1.27 s segments advanced by 1.2 s.
    """

    sample_rate: int = 24000
    frame_len: int = 480
    hop: int = 240
    fft_size: int = 512
    segment_frames: int = 127
    segment_shift: int = 120

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def frames_per_label(self) -> int:
        # 100 ms label frames over a 10 ms feature hop
        return int(round(0.1 * self.sample_rate / self.hop))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1

    def segment_samples(self) -> int:
        return (self.segment_frames - 1) * self.hop + self.frame_len

    def validate(self) -> list[str]:
        problems = []
        if not (self.frame_len >= self.hop > 0):
            problems.append("require frame_len >= hop > 0")
        if self.fft_size < self.frame_len:
            problems.append("fft_size must be >= frame_len")
        if self.segment_frames < 1 or self.segment_shift < 1:
            problems.append("segment_frames and segment_shift must be >= 1")
        if self.sample_rate <= 0:
            problems.append("sample_rate must be positive")
        return problems


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(
    wave: np.ndarray,
    frame_len: int,
    hop: int,
    fft_size: int | None = None,
    window: str = "hann",
) -> np.ndarray:
    """Short-time Fourier transform of a single channel.

    Args:
        wave: 1-D signal; must contain at least one full frame.
        frame_len: analysis frame length in samples.
        hop: frame advance in samples.
        fft_size: FFT length (>= frame_len); defaults to frame_len.
        window: "hann" or "rect".

    Returns:
        Complex array of shape (fft_size // 2 + 1, n_frames) with
        n_frames = (len(wave) - frame_len) // hop + 1.
    """
    wave = np.asarray(wave)
    if wave.ndim != 1:
        raise FormatError(f"stft expects a single channel, got shape {wave.shape}")
    if not (frame_len >= hop > 0):
        raise ValidationError("require frame_len >= hop > 0")
    if wave.shape[0] < frame_len:
        raise ValidationError(
            f"input of {wave.shape[0]} samples is shorter than one {frame_len}-sample frame"
        )
    if fft_size is None:
        fft_size = frame_len
    if fft_size < frame_len:
        raise ValidationError("fft_size must be >= frame_len")

    if window == "hann":
        win = hann_window(frame_len)
    elif window == "rect":
        win = np.ones(frame_len)
    else:
        raise ValidationError(f"unknown window {window!r}")

    n_frames = (wave.shape[0] - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wave[idx] * win
    spec = np.fft.rfft(frames, n=fft_size, axis=1)
    return spec.T  # (F, T)


def extract_features(wave: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Amplitude + IPD features from a 4-channel FOA waveform.

    ``wave`` has shape (4, n_samples), channels in ACN order (W, Y, Z, X).
    Channels 0-3 of the result are per-channel spectrogram magnitudes;
    channels 4-6 are the phases of Y, Z, X relative to W, in (-pi, pi].
    Bins where the reference magnitude is below ``IPD_REF_EPS`` get IPD 0.
    """
    wave = np.asarray(wave)
    if wave.ndim != 2 or wave.shape[0] != 4:
        raise FormatError(f"expected a (4, n) FOA waveform, got shape {wave.shape}")

    specs = [
        stft(wave[ch], config.frame_len, config.hop, config.fft_size) for ch in range(4)
    ]
    mags = [np.abs(s) for s in specs]
    ref = specs[0]
    ref_ok = mags[0] >= IPD_REF_EPS
    ipds = [
        np.where(ref_ok, np.angle(specs[ch] * np.conj(ref)), 0.0) for ch in (1, 2, 3)
    ]
    return np.stack(mags + ipds, axis=0).astype(np.float64)


def segment(
    features: np.ndarray, seg_frames: int, shift_frames: int
) -> list[np.ndarray]:
    """Split (M, F, T) features into overlapping fixed-length windows.

    Yields ceil((T - seg_frames) / shift_frames) + 1 windows for
    T > seg_frames, otherwise exactly one; the final window is
    zero-padded on the right to ``seg_frames``.
    """
    if seg_frames < 1 or shift_frames < 1:
        raise ValidationError("seg_frames and shift_frames must be >= 1")
    features = np.asarray(features)
    t_total = features.shape[-1]
    if t_total <= seg_frames:
        n_segments = 1
    else:
        n_segments = int(np.ceil((t_total - seg_frames) / shift_frames)) + 1

    out = []
    for s in range(n_segments):
        start = s * shift_frames
        chunk = features[..., start : start + seg_frames]
        if chunk.shape[-1] < seg_frames:
            pad = seg_frames - chunk.shape[-1]
            chunk = np.pad(chunk, [(0, 0)] * (features.ndim - 1) + [(0, pad)])
        out.append(chunk)
    return out


def segment_valid_frames(t_total: int, seg_frames: int, shift_frames: int) -> list[int]:
    """Number of un-padded frames in each window produced by ``segment``."""
    if t_total <= seg_frames:
        return [min(t_total, seg_frames)]
    n_segments = int(np.ceil((t_total - seg_frames) / shift_frames)) + 1
    return [min(seg_frames, t_total - s * shift_frames) for s in range(n_segments)]
