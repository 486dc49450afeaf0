"""Frame-level feature extraction.

Framing/windowing, mel-cepstral features, modified group delay phase
features, delta appending, energy-based voice activity detection, and
tandem features built from a posteriorgram provider.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.fftpack import dct

from .audio import Waveform

LOG_FLOOR = 1e-10


class FeatureError(ValueError):
    """Raised for invalid feature-extraction inputs or configs."""


# ---------------------------------------------------------------------------
# configs and containers


@dataclass(frozen=True)
class FrameConfig:
    """Short-time analysis: 25 ms windows advanced by 10 ms, Hamming."""

    frame_len_ms: float = 25.0
    shift_ms: float = 10.0
    window: str = "hamming"
    fft_size: int | None = None  # None: smallest power of two >= frame length

    def __post_init__(self):
        if not 0 < self.shift_ms <= self.frame_len_ms:
            raise FeatureError(
                f"need 0 < shift_ms <= frame_len_ms, got {self.shift_ms}/{self.frame_len_ms}"
            )
        if self.window not in ("hamming", "hann", "rect"):
            raise FeatureError(f"unknown window {self.window!r}")

    def frame_len(self, sample_rate: int) -> int:
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def shift(self, sample_rate: int) -> int:
        return int(round(self.shift_ms * sample_rate / 1000.0))

    def nfft(self, sample_rate: int) -> int:
        n = self.frame_len(sample_rate)
        if self.fft_size is not None:
            if self.fft_size < n:
                raise FeatureError(f"fft_size {self.fft_size} < frame length {n}")
            return self.fft_size
        size = 1
        while size < n:
            size *= 2
        return size

    def window_values(self, sample_rate: int) -> np.ndarray:
        n = self.frame_len(sample_rate)
        if self.window == "hamming":
            return np.hamming(n)
        if self.window == "hann":
            return np.hanning(n)
        return np.ones(n)


@dataclass(frozen=True)
class MfccConfig:
    n_mel_filters: int = 27
    n_ceps: int = 18
    include_c0: bool = False
    log_floor: float = LOG_FLOOR
    delta_window: int = 2

    def __post_init__(self):
        if self.n_ceps > self.n_mel_filters:
            raise FeatureError(f"n_ceps {self.n_ceps} > n_mel_filters {self.n_mel_filters}")
        if self.log_floor <= 0:
            raise FeatureError("log_floor must be positive")


@dataclass(frozen=True)
class GroupDelayConfig:
    """Shape parameters of the modified group delay spectrum.

    rho tempers the spectral-envelope division, gamma compresses the
    result; smooth_lifter_len is the number of low-quefrency cepstral
    coefficients kept when smoothing the magnitude envelope (0 disables
    smoothing so the raw magnitude is used).
    """

    rho: float = 0.4
    gamma: float = 0.9
    smooth_lifter_len: int = 30
    n_ceps: int = 18

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise FeatureError(f"rho must be in (0, 1], got {self.rho}")
        if not 0 < self.gamma <= 1:
            raise FeatureError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.smooth_lifter_len < 0:
            raise FeatureError("smooth_lifter_len must be >= 0")


@dataclass(frozen=True)
class FrameMatrix:
    """Per-frame feature vectors, one row per frame."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise FeatureError(f"frame matrix must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise FeatureError("frame matrix contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


class PosteriorgramProvider(Protocol):
    """Source of per-frame class posteriors (rows sum to one)."""

    n_classes: int

    def posteriorgram(self, frames: FrameMatrix) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# framing and spectra


def frame_signal(w: Waveform, cfg: FrameConfig) -> FrameMatrix:
    """Slice a waveform into overlapping windowed frames.

    Frame count is 1 + floor((len - frame_len) / shift); trailing samples
    that do not fill a frame are dropped.
    """
    n = cfg.frame_len(w.sample_rate)
    shift = cfg.shift(w.sample_rate)
    if len(w.samples) < n:
        raise FeatureError(f"signal too short: {len(w.samples)} samples < one {n}-sample frame")
    count = 1 + (len(w.samples) - n) // shift
    idx = shift * np.arange(count)[:, None] + np.arange(n)[None, :]
    frames = w.samples[idx] * cfg.window_values(w.sample_rate)[None, :]
    return FrameMatrix(frames)


def power_spectrum(frames: np.ndarray, nfft: int) -> np.ndarray:
    """|rfft|^2 of each row, no 1/N normalisation."""
    return np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2


def mel_filterbank(n_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, 0 Hz to Nyquist.

    Returns (n_filters, nfft//2 + 1) weights.
    """
    high_mel = 2595.0 * np.log10(1.0 + (sample_rate / 2.0) / 700.0)
    mel_points = np.linspace(0.0, high_mel, n_filters + 2)
    hz_points = 700.0 * (10.0 ** (mel_points / 2595.0) - 1.0)
    bins = np.floor((nfft + 1) * hz_points / sample_rate).astype(int)
    fb = np.zeros((n_filters, nfft // 2 + 1))
    for j in range(n_filters):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        for i in range(left, center):
            fb[j, i] = (i - left) / max(center - left, 1)
        for i in range(center, right):
            fb[j, i] = (right - i) / max(right - center, 1)
    return fb


def mel_center_freqs(n_filters: int, sample_rate: int) -> np.ndarray:
    high_mel = 2595.0 * np.log10(1.0 + (sample_rate / 2.0) / 700.0)
    mel_points = np.linspace(0.0, high_mel, n_filters + 2)
    return 700.0 * (10.0 ** (mel_points[1:-1] / 2595.0) - 1.0)


def compute_mfcc(w: Waveform, fcfg: FrameConfig, mcfg: MfccConfig) -> FrameMatrix:
    """Static mel-frequency cepstra, one row per frame.

    Power spectrum -> mel filterbank -> floored log -> orthonormal DCT-II;
    c0 is dropped unless include_c0 is set, so the output dim is n_ceps
    either way.
    """
    if w.sample_rate < 8000:
        raise FeatureError(f"sample rate {w.sample_rate} below supported minimum 8000")
    frames = frame_signal(w, fcfg)
    nfft = fcfg.nfft(w.sample_rate)
    fb = mel_filterbank(mcfg.n_mel_filters, nfft, w.sample_rate)
    energies = power_spectrum(frames.data, nfft) @ fb.T
    logmel = np.log(np.maximum(energies, mcfg.log_floor))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)
    if mcfg.include_c0:
        return FrameMatrix(ceps[:, : mcfg.n_ceps])
    return FrameMatrix(ceps[:, 1 : mcfg.n_ceps + 1])


# ---------------------------------------------------------------------------
# modified group delay


def _smoothed_magnitude(mag: np.ndarray, nfft: int, lifter_len: int) -> np.ndarray:
    """Cepstrally smoothed magnitude: keep the first lifter_len quefrencies."""
    if lifter_len == 0:
        return mag
    logmag = np.log(np.maximum(mag, LOG_FLOOR))
    ceps = np.fft.irfft(logmag, n=nfft, axis=-1)
    mask = np.zeros(nfft)
    keep = min(lifter_len, nfft)
    mask[:keep] = 1.0
    if keep > 1:
        mask[nfft - keep + 1 :] = 1.0  # mirror: real cepstrum is even
    smoothed = np.fft.rfft(ceps * mask, n=nfft, axis=-1).real
    return np.exp(smoothed)


def _mgd_frames(frames: np.ndarray, cfg: GroupDelayConfig, nfft: int) -> np.ndarray:
    """Modified group delay spectra for a batch of frames."""
    n = np.arange(frames.shape[1])
    X = np.fft.rfft(frames, n=nfft, axis=1)
    Y = np.fft.rfft(frames * n[None, :], n=nfft, axis=1)
    cross = X.real * Y.real + Y.imag * X.imag
    smag = _smoothed_magnitude(np.abs(X), nfft, cfg.smooth_lifter_len)
    valid = smag >= LOG_FLOOR
    tau = np.zeros_like(cross)
    np.divide(cross, smag ** (2.0 * cfg.rho), out=tau, where=valid)
    return np.sign(tau) * np.abs(tau) ** cfg.gamma


def compute_mgd_spectrum(frame: np.ndarray, cfg: GroupDelayConfig, fft_size: int) -> np.ndarray:
    """Modified group delay spectrum of one (already windowed) frame.

    Returns fft_size//2 + 1 values: sign(tau) * |tau|^gamma where
    tau = (X_R Y_R + Y_I X_I) / |S|^(2*rho), X the frame spectrum, Y the
    spectrum of n*x[n], and |S| the cepstrally smoothed magnitude of X.
    Bins whose smoothed magnitude underflows are set to zero.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise FeatureError("expected a 1-D frame")
    if fft_size < len(frame):
        raise FeatureError(f"fft_size {fft_size} < frame length {len(frame)}")
    return _mgd_frames(frame[None, :], cfg, fft_size)[0]


def compute_mgdcc(
    w: Waveform, fcfg: FrameConfig, gcfg: GroupDelayConfig, n_mel_filters: int = 27
) -> FrameMatrix:
    """Mel-cepstral compression of the modified group delay spectrum.

    The filterbank is applied directly to the (possibly negative) group
    delay values, without a log, then DCT-II keeps the first n_ceps
    coefficients including coefficient 0.
    """
    frames = frame_signal(w, fcfg)
    nfft = fcfg.nfft(w.sample_rate)
    tau = _mgd_frames(frames.data, gcfg, nfft)
    fb = mel_filterbank(n_mel_filters, nfft, w.sample_rate)
    filtered = tau @ fb.T
    ceps = dct(filtered, type=2, norm="ortho", axis=1)
    return FrameMatrix(ceps[:, : gcfg.n_ceps])


# ---------------------------------------------------------------------------
# deltas, VAD, tandem


def append_deltas(f: FrameMatrix, window: int = 2) -> FrameMatrix:
    """Append first-order regression deltas, doubling the feature dim.

    delta_t = sum_k k*(y[t+k] - y[t-k]) / (2*sum_k k^2), edges replicated.
    """
    if f.n_frames == 0:
        raise FeatureError("cannot compute deltas of an empty frame matrix")
    if window < 1:
        raise FeatureError("delta window must be >= 1")
    padded = np.pad(f.data, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    delta = np.zeros_like(f.data)
    for k in range(1, window + 1):
        delta += k * (padded[window + k : window + k + f.n_frames] - padded[window - k : window - k + f.n_frames])
    delta /= denom
    return FrameMatrix(np.hstack([f.data, delta]))


def energy_vad(w: Waveform, fcfg: FrameConfig, threshold_db: float = -40.0) -> np.ndarray:
    """Boolean keep-mask per frame from relative log energy.

    A frame is kept iff its energy in dB is within |threshold_db| of the
    loudest frame; the loudest frame itself always passes, so at least one
    frame survives.
    """
    frames = frame_signal(w, fcfg)
    energy = np.sum(frames.data**2, axis=1)
    log_e = 10.0 * np.log10(np.maximum(energy, 1e-20))
    return log_e >= log_e.max() + threshold_db


def tandem_features(
    base: FrameMatrix,
    provider: PosteriorgramProvider,
    pca,
    acoustic: FrameMatrix | None = None,
) -> FrameMatrix:
    """Append a compressed log-posteriorgram block to base features.

    Posteriors come from `acoustic` frames (default: the base frames
    themselves), are log-compressed with a floor, and projected by the
    trained PCA model before concatenation.
    """
    source = base if acoustic is None else acoustic
    if source.n_frames != base.n_frames:
        raise FeatureError(
            f"frame count mismatch: base {base.n_frames} vs posterior source {source.n_frames}"
        )
    posts = provider.posteriorgram(source)
    if posts.shape[0] != base.n_frames:
        raise FeatureError(
            f"provider returned {posts.shape[0]} posterior rows for {base.n_frames} frames"
        )
    log_posts = np.log(np.maximum(posts, LOG_FLOOR))
    block = pca.transform(log_posts)
    return FrameMatrix(np.hstack([base.data, block]))


class GmmPosteriorgram:
    """Posteriorgram provider backed by an unsupervised diagonal GMM.

    Component responsibilities play the role of phonetic-class posteriors.
    """

    def __init__(self, gmm):
        self.gmm = gmm
        self.n_classes = gmm.n_components

    def posteriorgram(self, frames: FrameMatrix) -> np.ndarray:
        return np.exp(self.gmm.log_responsibilities(frames.data))
