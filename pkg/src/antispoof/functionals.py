"""Utterance-level statistics over acoustic and prosodic descriptors.

Per-frame low-level descriptors (cepstra, energy, pitch, voicing,
spectral and perturbation measures) plus their deltas are summarised by
a fixed battery of statistical functionals into one vector per
utterance, mirroring paralinguistic baseline feature sets at a reduced
dimensionality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fftpack import dct

from .audio import Waveform
from .features import (
    FeatureError,
    FrameConfig,
    MfccConfig,
    append_deltas,
    energy_vad,
    FrameMatrix,
    mel_filterbank,
    power_spectrum,
)

FUNCTIONAL_NAMES = (
    "mean",
    "std",
    "skewness",
    "kurtosis",
    "min",
    "max",
    "range",
    "p25",
    "p50",
    "p75",
    "slope",
)


@dataclass(frozen=True)
class FunctionalConfig:
    frame: FrameConfig = field(default_factory=FrameConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    f0_min_hz: float = 50.0
    f0_max_hz: float = 400.0
    voicing_threshold: float = 0.3
    apply_vad: bool = True
    vad_threshold_db: float = -40.0

    @property
    def lld_names(self) -> tuple[str, ...]:
        mfcc = tuple(f"mfcc{i + 1}" for i in range(self.mfcc.n_ceps))
        return mfcc + (
            "log_energy",
            "zcr",
            "f0",
            "voicing",
            "spectral_centroid",
            "jitter",
            "shimmer",
        )

    @property
    def dim(self) -> int:
        return 2 * len(self.lld_names) * len(FUNCTIONAL_NAMES)


def feature_names(cfg: FunctionalConfig) -> list[str]:
    """Flat names in output order: LLDs then deltas, functionals-minor."""
    streams = list(cfg.lld_names) + [f"d_{n}" for n in cfg.lld_names]
    return [f"{stream}_{func}" for stream in streams for func in FUNCTIONAL_NAMES]


def _raw_frames(samples: np.ndarray, n: int, shift: int) -> np.ndarray:
    count = 1 + (len(samples) - n) // shift
    idx = shift * np.arange(count)[:, None] + np.arange(n)[None, :]
    return samples[idx]


def _autocorr_f0(frames: np.ndarray, sample_rate: int, cfg: FunctionalConfig):
    """Pitch and voicing from the normalised autocorrelation peak."""
    n = frames.shape[1]
    centered = frames - frames.mean(axis=1, keepdims=True)
    nfft = 1
    while nfft < 2 * n:
        nfft *= 2
    spec = np.fft.rfft(centered, n=nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=1)[:, :n]
    r0 = acf[:, 0]
    lag_min = max(int(np.floor(sample_rate / cfg.f0_max_hz)), 2)
    lag_max = min(int(np.ceil(sample_rate / cfg.f0_min_hz)), n - 2)
    f0 = np.zeros(len(frames))
    voicing = np.zeros(len(frames))
    if lag_max <= lag_min:
        return f0, voicing
    window = acf[:, lag_min : lag_max + 1]
    peak_idx = np.argmax(window, axis=1)
    for t in range(len(frames)):
        if r0[t] <= 0:
            continue
        lag = lag_min + int(peak_idx[t])
        peak = acf[t, lag] / r0[t]
        voicing[t] = float(np.clip(peak, 0.0, 1.0))
        if peak < cfg.voicing_threshold:
            continue
        # parabolic refinement around the integer-lag peak
        if 0 < lag < n - 1:
            left, mid, right = acf[t, lag - 1], acf[t, lag], acf[t, lag + 1]
            denom = left - 2.0 * mid + right
            shift = 0.5 * (left - right) / denom if denom != 0 else 0.0
            lag_refined = lag + float(np.clip(shift, -0.5, 0.5))
        else:
            lag_refined = float(lag)
        f0[t] = sample_rate / lag_refined
    return f0, voicing


def _low_level_descriptors(w: Waveform, cfg: FunctionalConfig):
    n = cfg.frame.frame_len(w.sample_rate)
    shift = cfg.frame.shift(w.sample_rate)
    if len(w.samples) < n:
        raise FeatureError("signal too short for functional extraction")
    raw = _raw_frames(w.samples, n, shift)
    windowed = raw * cfg.frame.window_values(w.sample_rate)[None, :]
    nfft = cfg.frame.nfft(w.sample_rate)

    spec = power_spectrum(windowed, nfft)
    fb = mel_filterbank(cfg.mfcc.n_mel_filters, nfft, w.sample_rate)
    logmel = np.log(np.maximum(spec @ fb.T, cfg.mfcc.log_floor))
    mfcc = dct(logmel, type=2, norm="ortho", axis=1)[:, 1 : cfg.mfcc.n_ceps + 1]

    energy = np.sum(raw**2, axis=1)
    log_energy = 10.0 * np.log10(np.maximum(energy, 1e-20))
    zcr = np.mean(np.abs(np.diff(np.signbit(raw).astype(np.int8), axis=1)), axis=1)
    freqs = np.fft.rfftfreq(nfft, d=1.0 / w.sample_rate)
    centroid = (spec @ freqs) / np.maximum(spec.sum(axis=1), 1e-20)
    f0, voicing = _autocorr_f0(raw, w.sample_rate, cfg)

    jitter = np.zeros(len(raw))
    both_voiced = (f0[1:] > 0) & (f0[:-1] > 0)
    jitter[1:][both_voiced] = np.abs(np.diff(f0))[both_voiced] / f0[1:][both_voiced]
    shimmer = np.zeros(len(raw))
    shimmer[1:] = np.abs(np.diff(energy)) / np.maximum(energy[1:], 1e-20)

    llds = np.column_stack([mfcc, log_energy, zcr, f0, voicing, centroid, jitter, shimmer])
    return llds, f0 > 0


_VOICED_ONLY = ("f0", "jitter")


def _apply_functionals(values: np.ndarray) -> np.ndarray:
    """The eleven summary statistics of one descriptor track."""
    if len(values) == 0:
        return np.zeros(len(FUNCTIONAL_NAMES))
    mean = float(values.mean())
    std = float(values.std())
    if std > 1e-12 and len(values) > 2:
        z = (values - mean) / std
        skew = float(np.mean(z**3))
        kurt = float(np.mean(z**4) - 3.0)
    else:
        skew = kurt = 0.0
    vmin, vmax = float(values.min()), float(values.max())
    p25, p50, p75 = np.percentile(values, [25, 50, 75])
    if len(values) > 1:
        t = np.arange(len(values), dtype=np.float64)
        t -= t.mean()
        slope = float(t @ (values - mean) / (t @ t))
    else:
        slope = 0.0
    return np.array([mean, std, skew, kurt, vmin, vmax, vmax - vmin, p25, p50, p75, slope])


def extract_functionals(w: Waveform, cfg: FunctionalConfig = FunctionalConfig()) -> np.ndarray:
    """One fixed-dimension vector of functionals per utterance.

    Pitch-derived descriptors (f0, jitter and their deltas) are
    summarised over voiced frames only and zeroed when nothing is voiced;
    everything else is summarised over all retained frames.
    """
    llds, voiced = _low_level_descriptors(w, cfg)
    if cfg.apply_vad:
        mask = energy_vad(w, cfg.frame, cfg.vad_threshold_db)
        llds = llds[mask]
        voiced = voiced[mask]
    if llds.shape[0] < 3:
        raise FeatureError(f"too short: {llds.shape[0]} frames after VAD, need >= 3")
    with_deltas = append_deltas(FrameMatrix(llds), cfg.mfcc.delta_window).data

    names = list(cfg.lld_names) + [f"d_{n}" for n in cfg.lld_names]
    blocks = []
    for idx, name in enumerate(names):
        track = with_deltas[:, idx]
        stem = name[2:] if name.startswith("d_") else name
        if stem in _VOICED_ONLY:
            track = track[voiced]
        blocks.append(_apply_functionals(track))
    return np.concatenate(blocks)
