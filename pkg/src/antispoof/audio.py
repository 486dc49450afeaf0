"""Waveform container and RIFF WAV input/output.

Audio enters the pipeline as mono PCM-16 WAV at any sample rate >= 8 kHz;
everything downstream works on float64 samples in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

MIN_SAMPLE_RATE = 8000
_PCM16_SCALE = 32767.0


class AudioError(ValueError):
    """Raised for unsupported or malformed audio input."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio signal: float samples (nominal range [-1, 1]) plus rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.ndim != 1:
            raise AudioError(f"expected mono 1-D samples, got shape {samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> Waveform:
    """Load a mono PCM-16 WAV file, rejecting unsupported rates/layouts."""
    rate, data = wavfile.read(str(path))
    if rate < MIN_SAMPLE_RATE:
        raise AudioError(f"{path}: sample rate {rate} below supported minimum {MIN_SAMPLE_RATE}")
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype != np.int16:
        raise AudioError(f"{path}: expected PCM 16-bit samples, got {data.dtype}")
    return Waveform(data.astype(np.float64) / _PCM16_SCALE, int(rate))


def write_wav(path, w: Waveform) -> None:
    """Write a waveform as mono PCM-16, clipping to full scale."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(clipped * _PCM16_SCALE).astype("<i2")
    wavfile.write(str(path), w.sample_rate, pcm)
