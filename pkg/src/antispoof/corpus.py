"""Synthetic desk-scale corpus: genuine utterances and spoofing transforms.

Genuine signals are mixed-phase vowel-like utterances (glottal pulse
train through speaker-specific resonators plus a maximum-phase echo
component). Spoofs recreate the magnitude envelope while destroying the
phase structure: minimum-phase reconstruction, coherent random-phase
resynthesis, magnitude-only (Griffin-Lim) resynthesis, LPC vocoding, and
phase-vocoder pitch shifting.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from scipy.linalg import solve_toeplitz

from .audio import Waveform, write_wav
from .evaluation import Trial, TrialSet


class CorpusError(ValueError):
    """Raised for invalid corpus specs or unknown transforms."""


KNOWN_TAGS = ("S1", "S2", "S3", "S4", "S5")
UNKNOWN_TAGS = ("S6", "S7", "S8", "S9", "S10")


def derived_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of identifiers (hash() is salted)."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# genuine synthesis


# canonical vowel formant targets (Hz); every speaker renders the same
# inventory scaled by an individual vocal-tract factor, so utterances
# traverse shared acoustic regions and models generalise across speakers
VOWEL_FORMANTS = np.array(
    [
        [730.0, 1090.0, 2440.0, 3400.0],  # a
        [270.0, 2290.0, 3010.0, 3700.0],  # i
        [300.0, 870.0, 2240.0, 3400.0],  # u
        [530.0, 1840.0, 2480.0, 3500.0],  # e
        [570.0, 840.0, 2410.0, 3400.0],  # o
        [660.0, 1720.0, 2410.0, 3500.0],  # ae
        [440.0, 1020.0, 2240.0, 3400.0],  # open o
        [490.0, 1350.0, 1690.0, 3500.0],  # er
    ]
)
_FORMANT_BWS = np.array([80.0, 90.0, 120.0, 150.0])


@dataclass(frozen=True)
class SpeakerParams:
    f0_base: float
    vtl_scale: float  # vocal-tract length factor applied to all formants
    echo_delay: int
    echo_gain: float
    glottal_tau_ms: float

    @staticmethod
    def random(rng: np.random.Generator) -> "SpeakerParams":
        return SpeakerParams(
            f0_base=float(rng.uniform(140.0, 280.0)),
            vtl_scale=float(rng.uniform(0.9, 1.1)),
            echo_delay=int(rng.integers(32, 72)),
            echo_gain=float(rng.uniform(0.3, 0.45)),
            glottal_tau_ms=float(rng.uniform(0.7, 1.3)),
        )


def synth_genuine(
    speaker: SpeakerParams, duration: float, seed: int, sample_rate: int = 16000
) -> Waveform:
    """Deterministic pseudo-speech utterance, peak-normalised to 0.5.

    A jittered/shimmered glottal pulse train drives a cascade of formant
    resonators whose targets hop through the shared vowel inventory every
    120-300 ms (filter state carries across segment boundaries). Two
    deliberately non-minimum-phase traits give the phase spectrum
    something to lose: the glottal pulse builds up slowly and closes
    sharply (a time-reversed decay, maximum phase), and a short echo tap
    a + z^-d with a < 1 has all its zeros outside the unit circle. The f0
    range starts at 140 Hz so harmonics stay resolved at the spoofing
    transforms' analysis resolution.
    """
    if duration < 0.5:
        raise CorpusError(f"duration {duration} below 0.5 s minimum")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))

    # glottal pulse train with slow vibrato, per-period jitter and shimmer
    excitation = np.zeros(n + sample_rate // 10)
    pos = 0.0
    t_vibrato = 2.0 * np.pi * rng.uniform(0.0, 1.0)
    vibrato_rate = rng.uniform(4.0, 6.5)
    while pos < n + sample_rate // 20:
        phase = t_vibrato + 2.0 * np.pi * vibrato_rate * pos / sample_rate
        f0 = speaker.f0_base * (1.0 + 0.03 * np.sin(phase) + 0.01 * rng.standard_normal())
        f0 = max(f0, 60.0)
        amp = 1.0 + 0.08 * rng.standard_normal()
        excitation[int(pos)] += amp
        pos += sample_rate / f0

    # maximum-phase glottal shape: slow build-up, sharp closure
    tau = speaker.glottal_tau_ms * sample_rate / 1000.0
    shape_len = int(6 * tau)
    m = np.arange(shape_len)
    shape = (shape_len - m) * np.exp(-(shape_len - m) / tau)
    shape /= np.max(shape)
    source = np.convolve(excitation, shape)[:n]

    # vowel-hopping formant cascade, filter state carried across segments
    voiced = np.zeros(n)
    states = [np.zeros(2) for _ in range(VOWEL_FORMANTS.shape[1])]
    t = 0
    while t < n:
        seg = min(int(rng.uniform(0.12, 0.30) * sample_rate), n - t)
        formants = VOWEL_FORMANTS[rng.integers(len(VOWEL_FORMANTS))] * speaker.vtl_scale
        bws = _FORMANT_BWS * rng.uniform(0.9, 1.1)
        chunk = source[t : t + seg]
        for i, (freq, bw) in enumerate(zip(formants, bws)):
            r = np.exp(-np.pi * bw / sample_rate)
            theta = 2.0 * np.pi * freq / sample_rate
            chunk, states[i] = lfilter(
                [1.0], [1.0, -2.0 * r * np.cos(theta), r * r], chunk, zi=states[i]
            )
        voiced[t : t + seg] = chunk
        t += seg

    # maximum-phase echo: zeros of a + z^-d lie outside the unit circle
    echoed = speaker.echo_gain * voiced
    echoed[speaker.echo_delay :] += voiced[: n - speaker.echo_delay]

    noise = rng.standard_normal(n) * np.max(np.abs(echoed)) * 0.003
    samples = echoed + noise
    samples *= 0.5 / np.max(np.abs(samples))
    return Waveform(samples, sample_rate)


# ---------------------------------------------------------------------------
# STFT helpers for the spoofing transforms


def _stft_frames(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    n_frames = 1 + max(len(x) - frame, 0) // hop
    pad = (n_frames - 1) * hop + frame
    padded = np.pad(x, (0, max(pad - len(x), 0)))
    idx = hop * np.arange(n_frames)[:, None] + np.arange(frame)[None, :]
    return padded[idx] * np.hanning(frame)[None, :]


def _overlap_add(frames: np.ndarray, hop: int, length: int) -> np.ndarray:
    n_frames, frame = frames.shape
    window = np.hanning(frame)
    total = (n_frames - 1) * hop + frame
    weighted = frames * window[None, :]
    out = np.zeros(total)
    norm = np.zeros(total)
    if frame % hop == 0:
        # frames with the same phase (m mod K) never overlap: scatter by group
        k_groups = frame // hop
        for g in range(k_groups):
            rows = weighted[g::k_groups]
            span = len(rows) * frame
            out[g * hop : g * hop + span] += rows.reshape(-1)
            norm[g * hop : g * hop + span] += np.tile(window**2, len(rows))
    else:
        idx = hop * np.arange(n_frames)[:, None] + np.arange(frame)[None, :]
        np.add.at(out, idx, weighted)
        np.add.at(norm, idx, np.broadcast_to(window**2, weighted.shape))
    out /= np.maximum(norm, 1e-8)
    return out[:length] if len(out) >= length else np.pad(out, (0, length - len(out)))


def _min_phase_frame(mag: np.ndarray, nfft: int) -> np.ndarray:
    """Minimum-phase time frame with the given rfft magnitude (cepstral)."""
    ceps = np.fft.irfft(np.log(np.maximum(mag, 1e-10)), n=nfft)
    folded = np.zeros(nfft)
    folded[0] = ceps[0]
    folded[1 : nfft // 2] = 2.0 * ceps[1 : nfft // 2]
    folded[nfft // 2] = ceps[nfft // 2]
    return np.fft.irfft(np.exp(np.fft.rfft(folded)), n=nfft)


def _spoof_minphase(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    frames = _stft_frames(x, frame, hop)
    mags = np.abs(np.fft.rfft(frames, axis=1))
    rebuilt = np.empty_like(frames)
    for m in range(len(frames)):
        candidate = _min_phase_frame(mags[m], frame)
        # best circular lag keeps overlapping frames mutually coherent
        corr = np.fft.irfft(np.fft.rfft(frames[m]) * np.conj(np.fft.rfft(candidate)), n=frame)
        rebuilt[m] = np.roll(candidate, int(np.argmax(corr)))
    return _overlap_add(rebuilt, hop, len(x))


def _spoof_phaserand(x: np.ndarray, frame: int, hop: int, seed: int) -> np.ndarray:
    """One random phase offset per bin on top of the original phases.

    Multiplying every short-time spectrum by the same random unit phasors
    preserves per-frame magnitudes exactly and keeps overlapping frames
    mutually coherent (it acts like one wild all-pass filter), while the
    group-delay structure is completely scrambled.
    """
    rng = np.random.default_rng(seed)
    frames = _stft_frames(x, frame, hop)
    spec = np.fft.rfft(frames, axis=1)
    phi0 = rng.uniform(-np.pi, np.pi, size=spec.shape[1])
    phi0[0] = 0.0
    phi0[-1] = 0.0
    rebuilt = np.fft.irfft(spec * np.exp(1j * phi0)[None, :], n=frame, axis=1)
    return _overlap_add(rebuilt, hop, len(x))


def _spoof_magonly(x: np.ndarray, frame: int, hop: int, iterations: int) -> np.ndarray:
    """Griffin-Lim style magnitude-only resynthesis from zero phase."""
    target = np.abs(np.fft.rfft(_stft_frames(x, frame, hop), axis=1))
    frames = np.fft.irfft(target, n=frame, axis=1)  # zero-phase init
    y = _overlap_add(frames, hop, len(x))
    for _ in range(iterations):
        spec = np.fft.rfft(_stft_frames(y, frame, hop), axis=1)
        mag = np.abs(spec)
        spec = np.where(mag > 1e-12, spec / np.maximum(mag, 1e-12), 1.0) * target
        y = _overlap_add(np.fft.irfft(spec, n=frame, axis=1), hop, len(x))
    return y


def _frame_f0(frame_vals: np.ndarray, sample_rate: int) -> float:
    centered = frame_vals - frame_vals.mean()
    nfft = 1
    while nfft < 2 * len(centered):
        nfft *= 2
    spec = np.fft.rfft(centered, n=nfft)
    acf = np.fft.irfft(spec * np.conj(spec), n=nfft)[: len(centered)]
    if acf[0] <= 0:
        return 0.0
    lag_min = sample_rate // 400
    lag_max = min(sample_rate // 60, len(centered) - 1)
    lag = lag_min + int(np.argmax(acf[lag_min : lag_max + 1]))
    if acf[lag] / acf[0] < 0.25:
        return 0.0
    return sample_rate / lag


def _spoof_lpc(x: np.ndarray, sample_rate: int, order: int, frame: int, hop: int) -> np.ndarray:
    """All-pole vocoding: per-frame LPC envelopes excited by a pulse train."""
    n_frames = 1 + max(len(x) - frame, 0) // hop
    out = np.zeros(len(x))
    state = np.zeros(order)
    pulse_pos = 0.0
    excitation = np.zeros(len(x))
    for m in range(n_frames):
        seg = x[m * hop : m * hop + frame]
        f0 = _frame_f0(seg, sample_rate)
        period = sample_rate / (f0 if f0 > 0 else 120.0)
        while pulse_pos < (m + 1) * hop and pulse_pos < len(x):
            excitation[int(pulse_pos)] = 1.0
            pulse_pos += period
    for m in range(n_frames):
        seg = np.asarray(x[m * hop : m * hop + frame], dtype=np.float64)
        windowed = seg * np.hanning(len(seg))
        full = np.correlate(windowed, windowed, mode="full")
        r = full[len(windowed) - 1 : len(windowed) + order]
        r[0] *= 1.0 + 1e-6
        try:
            a = solve_toeplitz((r[:-1], r[:-1]), -r[1:])
        except np.linalg.LinAlgError:
            a = np.zeros(order)
        coeffs = np.concatenate([[1.0], a])
        lo, hi = m * hop, min(m * hop + hop, len(x))
        chunk, state = lfilter([1.0], coeffs, excitation[lo:hi], zi=state)
        energy_in = float(np.sum(x[lo:hi] ** 2))
        energy_out = float(np.sum(chunk**2))
        if energy_out > 0:
            chunk = chunk * np.sqrt(energy_in / energy_out)
        out[lo:hi] = chunk
    return out


def _spoof_pvoc(x: np.ndarray, factor: float, frame: int, hop: int) -> np.ndarray:
    """Phase-vocoder pitch shift: time-stretch then resample back."""
    analysis_hop = max(int(round(hop / factor)), 1)
    n_frames = 1 + max(len(x) - frame, 0) // analysis_hop
    pad = (n_frames - 1) * analysis_hop + frame
    padded = np.pad(x, (0, max(pad - len(x), 0)))
    idx = analysis_hop * np.arange(n_frames)[:, None] + np.arange(frame)[None, :]
    frames = padded[idx] * np.hanning(frame)[None, :]
    spec = np.fft.rfft(frames, axis=1)
    mags = np.abs(spec)
    phases = np.angle(spec)
    omega = 2.0 * np.pi * np.arange(mags.shape[1]) / frame
    out_phases = np.empty_like(phases)
    out_phases[0] = phases[0]
    for m in range(1, n_frames):
        dev = phases[m] - phases[m - 1] - omega * analysis_hop
        dev -= 2.0 * np.pi * np.round(dev / (2.0 * np.pi))
        freq = omega + dev / analysis_hop
        out_phases[m] = out_phases[m - 1] + freq * hop
    rebuilt = np.fft.irfft(mags * np.exp(1j * out_phases), n=frame, axis=1)
    stretched = _overlap_add(rebuilt, hop, int(len(x) * hop / analysis_hop))
    grid = np.arange(len(x)) * (len(stretched) - 1) / max(len(x) - 1, 1)
    return np.interp(grid, np.arange(len(stretched)), stretched)


# ---------------------------------------------------------------------------
# transforms and corpus assembly


@dataclass(frozen=True)
class SpoofTransform:
    kind: str  # minphase | phaserand | magonly | lpc | pvoc
    tag: str  # S1..S10
    params: dict = field(default_factory=dict)

    def __call__(self, w: Waveform, seed: int = 0) -> Waveform:
        return apply_spoof(w, self, seed)


def default_transforms() -> dict[str, SpoofTransform]:
    """Known (S1-S5) and parameter-shifted unknown (S6-S10) conditions."""
    return {
        "S1": SpoofTransform("minphase", "S1", {"frame": 512, "hop": 128}),
        "S2": SpoofTransform("phaserand", "S2", {"frame": 512, "hop": 128}),
        "S3": SpoofTransform("magonly", "S3", {"frame": 512, "hop": 128, "iterations": 32}),
        "S4": SpoofTransform("lpc", "S4", {"order": 16, "frame": 512, "hop": 128}),
        "S5": SpoofTransform("pvoc", "S5", {"factor": 1.15, "frame": 1024, "hop": 256}),
        "S6": SpoofTransform("minphase", "S6", {"frame": 256, "hop": 64}),
        "S7": SpoofTransform("phaserand", "S7", {"frame": 1024, "hop": 256}),
        "S8": SpoofTransform("magonly", "S8", {"frame": 512, "hop": 128, "iterations": 8}),
        "S9": SpoofTransform("lpc", "S9", {"order": 10, "frame": 512, "hop": 128}),
        "S10": SpoofTransform("pvoc", "S10", {"factor": 0.85, "frame": 1024, "hop": 256}),
    }


def apply_spoof(w: Waveform, t: SpoofTransform, seed: int = 0) -> Waveform:
    """Run one spoofing transform; output duration equals the input's.

    The signal is zero-padded by one transform frame on both sides so the
    overlap-add interior has full window coverage, then trimmed back.
    """
    p = t.params
    frame = p.get("frame", 512)
    pad = frame
    x = np.pad(w.samples, (pad, pad))
    if t.kind == "minphase":
        y = _spoof_minphase(x, frame, p.get("hop", 128))
    elif t.kind == "phaserand":
        y = _spoof_phaserand(x, frame, p.get("hop", 128), seed)
    elif t.kind == "magonly":
        y = _spoof_magonly(x, frame, p.get("hop", 128), p.get("iterations", 32))
    elif t.kind == "lpc":
        y = _spoof_lpc(x, w.sample_rate, p.get("order", 16), frame, p.get("hop", 128))
    elif t.kind == "pvoc":
        y = _spoof_pvoc(x, p.get("factor", 1.15), frame, p.get("hop", 256))
    else:
        raise CorpusError(f"unknown spoof kind {t.kind!r}")
    return Waveform(y[pad : pad + len(w.samples)], w.sample_rate)


@dataclass(frozen=True)
class CorpusSpec:
    n_speakers: int = 10  # per split
    utterances_per_speaker: int = 20
    duration_range: tuple = (1.0, 1.8)
    sample_rate: int = 16000
    seed: int = 42
    known_spoof_types: tuple = KNOWN_TAGS
    unknown_spoof_types: tuple = UNKNOWN_TAGS

    def to_text(self) -> str:
        lines = [
            f"n_speakers={self.n_speakers}",
            f"utterances_per_speaker={self.utterances_per_speaker}",
            f"duration_min={self.duration_range[0]}",
            f"duration_max={self.duration_range[1]}",
            f"sample_rate={self.sample_rate}",
            f"seed={self.seed}",
            f"known_spoof_types={','.join(self.known_spoof_types)}",
            f"unknown_spoof_types={','.join(self.unknown_spoof_types)}",
        ]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "CorpusSpec":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        return CorpusSpec(
            n_speakers=int(kv["n_speakers"]),
            utterances_per_speaker=int(kv["utterances_per_speaker"]),
            duration_range=(float(kv["duration_min"]), float(kv["duration_max"])),
            sample_rate=int(kv["sample_rate"]),
            seed=int(kv["seed"]),
            known_spoof_types=tuple(kv["known_spoof_types"].split(",")),
            unknown_spoof_types=tuple(kv["unknown_spoof_types"].split(",")),
        )


SPLITS = ("train", "dev", "eval")


def speaker_of(utterance_id: str) -> str:
    """Utterance ids are '<speaker>-u<idx>[-<tag>]'."""
    return utterance_id.split("-", 1)[0]


def build_corpus(spec: CorpusSpec, out_dir) -> TrialSet:
    """Write WAVs and the trial manifest for all three splits.

    Speakers are disjoint across splits; train/dev carry the known spoof
    conditions and eval additionally carries the unknown ones.
    """
    out = Path(out_dir)
    transforms = default_transforms()
    entries = []
    speaker_counter = 0
    for split in SPLITS:
        tags = list(spec.known_spoof_types)
        if split == "eval":
            tags += list(spec.unknown_spoof_types)
        for _ in range(spec.n_speakers):
            speaker_id = f"spk{speaker_counter:03d}"
            params = SpeakerParams.random(
                np.random.default_rng(derived_seed(spec.seed, "speaker", speaker_counter))
            )
            for j in range(spec.utterances_per_speaker):
                utt_seed = derived_seed(spec.seed, speaker_counter, j)
                rng = np.random.default_rng(utt_seed)
                duration = float(rng.uniform(*spec.duration_range))
                genuine = synth_genuine(params, duration, utt_seed, spec.sample_rate)
                base_id = f"{speaker_id}-u{j:02d}"
                write_wav(out / "wav" / split / f"{base_id}.wav", genuine)
                entries.append(Trial(base_id, "human", "none", split))
                for tag in tags:
                    spoofed = apply_spoof(
                        genuine, transforms[tag], derived_seed(spec.seed, speaker_counter, j, tag)
                    )
                    sid = f"{base_id}-{tag}"
                    write_wav(out / "wav" / split / f"{sid}.wav", spoofed)
                    entries.append(Trial(sid, "spoof", tag, split))
            speaker_counter += 1
    trials = TrialSet(entries)
    write_manifest(out / "manifest.tsv", trials)
    (out / "corpus_spec.txt").write_text(spec.to_text(), encoding="utf-8")
    return trials


def write_manifest(path, trials: TrialSet) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{e.utterance_id}\t{e.label}\t{e.spoof_type}\t{e.split}" for e in trials.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> TrialSet:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        utt, label, spoof_type, split = line.split("\t")
        entries.append(Trial(utt, label, spoof_type, split))
    return TrialSet(entries)


def wav_path(corpus_dir, trial: Trial) -> Path:
    return Path(corpus_dir) / "wav" / trial.split / f"{trial.utterance_id}.wav"
