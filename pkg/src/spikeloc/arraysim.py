"""Microphone-array simulator with analytically known inter-mic time differences.

Sources are point emitters in the horizontal plane.  Propagation is modeled
per microphone with the exact spherical law: each channel is the source
waveform delayed by distance/c and scaled by 1/distance.  Azimuth 0 deg points
along +x (for the default square array that is the outward direction through
the midpoint of mics 3 and 4) and grows counter-clockwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SPEED_OF_SOUND = 343.0  # m/s, dry air at ~20 C


@dataclass(frozen=True)
class MicArrayGeometry:
    """Planar microphone array: positions in meters, propagation speed in m/s."""

    mic_positions: tuple[tuple[float, float], ...]
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if len(self.mic_positions) < 2:
            raise ValueError("need at least two microphones")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        for a in range(len(self.mic_positions)):
            for b in range(a + 1, len(self.mic_positions)):
                if self.mic_positions[a] == self.mic_positions[b]:
                    raise ValueError(f"mics {a} and {b} share a position")

    @classmethod
    def square(cls, side_m: float = 0.064,
               speed_of_sound: float = SPEED_OF_SOUND) -> "MicArrayGeometry":
        """Four mics on the corners of a square centered on the origin.

        Mic order: 1=(-h,+h), 2=(-h,-h), 3=(+h,+h), 4=(+h,-h) with h=side/2,
        so azimuth 0 bisects the segment between mics 3 and 4.
        """
        if side_m <= 0:
            raise ValueError("side must be positive")
        h = side_m / 2.0
        return cls(mic_positions=((-h, h), (-h, -h), (h, h), (h, -h)),
                   speed_of_sound=speed_of_sound)

    @property
    def n_mics(self) -> int:
        return len(self.mic_positions)

    def pairs(self) -> list[tuple[int, int]]:
        """All unordered mic pairs (i, j) with i < j, lexicographic order."""
        n = self.n_mics
        return [(i, j) for i in range(n) for j in range(i + 1, n)]


@dataclass(frozen=True, eq=False)
class MultiTone:
    """Sum of sinusoids: tuples of (frequency_hz, amplitude, phase_rad)."""

    tones: tuple[tuple[float, float, float], ...]

    @classmethod
    def equal_amplitude(cls, freqs_hz, phases_rad=None) -> "MultiTone":
        if phases_rad is None:
            phases_rad = [0.0] * len(freqs_hz)
        if len(phases_rad) != len(freqs_hz):
            raise ValueError("one phase per frequency")
        return cls(tones=tuple((float(f), 1.0, float(p))
                               for f, p in zip(freqs_hz, phases_rad)))


@dataclass(frozen=True)
class NoiseBurst:
    """White Gaussian noise burst (band-limited below Nyquist on synthesis)."""


@dataclass(frozen=True, eq=False)
class ExternalSamples:
    """Caller-supplied mono waveform; sample rate must match the clip's."""

    samples: np.ndarray
    sample_rate: float


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """A point source: where it sits and what it emits."""

    azimuth_deg: float
    distance_m: float
    signal: MultiTone | NoiseBurst | ExternalSamples
    seed: int = 0

    def position(self) -> tuple[float, float]:
        a = math.radians(self.azimuth_deg)
        return (self.distance_m * math.cos(a), self.distance_m * math.sin(a))


@dataclass(frozen=True, eq=False)
class DirectionalNoise:
    """Interfering point source used by add_noise; needs the array geometry
    because a clip does not carry one."""

    source: SourceSpec
    geometry: MicArrayGeometry


@dataclass(eq=False)
class MultiChannelClip:
    """Multichannel audio, samples shaped (n_channels, n_samples) in [-1, 1]."""

    sample_rate: float
    samples: np.ndarray
    label_azimuth: float | None = None

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


def _mic_distances(geometry: MicArrayGeometry, source: SourceSpec) -> np.ndarray:
    sx, sy = source.position()
    pos = np.asarray(geometry.mic_positions, dtype=float)
    return np.hypot(pos[:, 0] - sx, pos[:, 1] - sy)


def analytic_tdoa(geometry: MicArrayGeometry, source: SourceSpec,
                  pair: tuple[int, int]) -> float:
    """Exact arrival-time difference T_i - T_j in seconds for mic pair (i, j).

    Positive means mic i hears the source later than mic j.
    """
    i, j = pair
    n = geometry.n_mics
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"pair {pair} out of range for {n} mics")
    d = _mic_distances(geometry, source)
    return float((d[i] - d[j]) / geometry.speed_of_sound)


def fractional_delay(signal: np.ndarray, delay_samples: float) -> np.ndarray:
    """Delay a real waveform by a (possibly fractional) number of samples.

    Implemented as a frequency-domain phase ramp, i.e. circular shift by
    delay_samples; exact for band-limited content.  The Nyquist bin is zeroed
    because its phase-ramped value has no real-signal interpretation for
    non-integer delays.
    """
    x = np.asarray(signal, dtype=float)
    n = x.shape[-1]
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n)  # cycles/sample
    spec = spec * np.exp(-2j * np.pi * freqs * delay_samples)
    if n % 2 == 0:
        spec[..., -1] = 0.0
    return np.fft.irfft(spec, n=n)


def synthesize_clip(geometry: MicArrayGeometry, source: SourceSpec,
                    duration_s: float, sample_rate: float,
                    normalize_peak: float = 0.9) -> MultiChannelClip:
    """Render one source into a multichannel clip with exact per-mic physics.

    Tonal sources are evaluated analytically per channel; sampled sources
    (noise bursts, external waveforms) are delayed with a frequency-domain
    phase ramp.  All channels share one normalization factor, so inter-channel
    gain ratios (the inverse-distance law) survive normalization.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    if sample_rate <= 0:
        raise ValueError("sample rate must be positive")
    n = int(round(duration_s * sample_rate))
    if n < 1:
        raise ValueError("duration shorter than one sample")
    if source.distance_m <= 0:
        raise ValueError("source distance must be positive")

    dists = _mic_distances(geometry, source)
    if np.any(dists == 0):
        raise ValueError("source coincides with a microphone")
    delays = dists / geometry.speed_of_sound  # seconds
    gains = 1.0 / dists

    sig = source.signal
    if isinstance(sig, MultiTone):
        if not sig.tones:
            raise ValueError("multi-tone source needs at least one tone")
        freqs = np.array([t[0] for t in sig.tones])
        if np.any(freqs <= 0) or np.any(freqs >= sample_rate / 2):
            raise ValueError("tone frequencies must lie in (0, Nyquist)")
        if duration_s < 1.0 / freqs.min():
            raise ValueError("clip shorter than one period of the lowest tone")
        t = np.arange(n) / sample_rate
        chans = np.zeros((geometry.n_mics, n))
        for k in range(geometry.n_mics):
            acc = np.zeros(n)
            for f, amp, ph in sig.tones:
                acc += amp * np.sin(2 * np.pi * f * (t - delays[k]) + ph)
            chans[k] = gains[k] * acc
    elif isinstance(sig, (NoiseBurst, ExternalSamples)):
        if isinstance(sig, NoiseBurst):
            rng = np.random.default_rng(source.seed)
            base = rng.standard_normal(n)
        else:
            if sig.sample_rate != sample_rate:
                raise ValueError("external sample rate does not match clip rate")
            if sig.samples.ndim != 1 or sig.samples.shape[0] < n:
                raise ValueError("external waveform shorter than the clip")
            base = np.asarray(sig.samples[:n], dtype=float)
        chans = np.stack([gains[k] * fractional_delay(base, delays[k] * sample_rate)
                          for k in range(geometry.n_mics)])
    else:
        raise TypeError(f"unsupported source signal {type(sig).__name__}")

    peak = np.max(np.abs(chans))
    if peak > 0:
        chans = chans * (normalize_peak / peak)
    return MultiChannelClip(sample_rate=float(sample_rate), samples=chans,
                            label_azimuth=source.azimuth_deg)


def add_noise(clip: MultiChannelClip, snr_db: float,
              kind: str | DirectionalNoise = "white",
              seed: int = 0) -> MultiChannelClip:
    """Return a copy of the clip with noise mixed in at an exact SNR.

    kind "white": independent Gaussian noise per channel, each channel scaled
    so its own signal/noise power ratio equals snr_db exactly.  A
    DirectionalNoise kind synthesizes an interfering point source through the
    given geometry and scales it with a single global factor (per-channel
    scaling would destroy the interferer's own time-difference structure).
    snr_db = +inf returns the clip unchanged (as a copy).  If the mix peaks
    beyond 1 the whole mix is rescaled, which leaves the SNR untouched.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return MultiChannelClip(clip.sample_rate, clip.samples.copy(),
                                clip.label_azimuth)
    sig = clip.samples
    sig_power = np.mean(sig ** 2, axis=1)
    if np.any(sig_power == 0):
        raise ValueError("SNR undefined: clip has a silent channel")
    ratio = 10.0 ** (snr_db / 10.0)

    if kind == "white":
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(sig.shape)
        noise_power = np.mean(noise ** 2, axis=1)
        scale = np.sqrt(sig_power / (ratio * noise_power))
        noise = noise * scale[:, None]
    elif isinstance(kind, DirectionalNoise):
        src = replace(kind.source, seed=seed)
        nclip = synthesize_clip(kind.geometry, src, clip.duration_s,
                                clip.sample_rate)
        noise = nclip.samples[:, :clip.n_samples]
        if noise.shape != sig.shape:
            raise ValueError("directional noise channel count mismatch")
        total_sig = np.sum(sig ** 2)
        total_noise = np.sum(noise ** 2)
        noise = noise * math.sqrt(total_sig / (ratio * total_noise))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")

    mixed = sig + noise
    peak = np.max(np.abs(mixed))
    if peak > 1.0:
        mixed = mixed * (0.99 / peak)
    return MultiChannelClip(clip.sample_rate, mixed, clip.label_azimuth)


def clip_windows(clip: MultiChannelClip, window_s: float = 0.170,
                 stride_s: float = 0.085) -> list[MultiChannelClip]:
    """Cut a clip into fixed-length windows on a regular stride.

    Yields floor((n_samples - window)/stride) + 1 windows (none if the clip is
    shorter than one window); every window inherits the clip's azimuth label.
    """
    if window_s <= 0 or stride_s <= 0:
        raise ValueError("window and stride must be positive")
    w = int(round(window_s * clip.sample_rate))
    s = int(round(stride_s * clip.sample_rate))
    if w < 1 or s < 1:
        raise ValueError("window and stride must span at least one sample")
    out = []
    if clip.n_samples >= w:
        count = (clip.n_samples - w) // s + 1
        for k in range(count):
            out.append(MultiChannelClip(clip.sample_rate,
                                        clip.samples[:, k * s:k * s + w],
                                        clip.label_azimuth))
    return out


# --- disk formats -----------------------------------------------------------

_WAV_FULL_SCALE = 32767.0


def write_wav(path: str | Path, clip: MultiChannelClip) -> None:
    """Write a clip as interleaved 16-bit PCM (little-endian) WAV."""
    data = np.clip(np.round(clip.samples.T * _WAV_FULL_SCALE),
                   -32768, 32767).astype("<i2")
    wavfile.write(str(path), int(round(clip.sample_rate)), data)


def read_wav(path: str | Path, label_azimuth: float | None = None) -> MultiChannelClip:
    """Read a 16-bit PCM WAV back into a float clip in [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim == 1:
        data = data[:, None]
    samples = data.T.astype(float) / _WAV_FULL_SCALE
    return MultiChannelClip(float(rate), samples, label_azimuth)


MANIFEST_FIELDS = ("path", "azimuth_deg", "distance_m", "snr_db",
                   "noise_kind", "split")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    azimuth_deg: float
    distance_m: float
    snr_db: float
    noise_kind: str
    split: str


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            writer.writerow([e.path, repr(e.azimuth_deg), repr(e.distance_m),
                             repr(e.snr_db), e.noise_kind, e.split])


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_FIELDS:
            raise ValueError(f"{path}: not a dataset manifest")
        out = []
        for row in reader:
            if len(row) != len(MANIFEST_FIELDS):
                raise ValueError(f"{path}: malformed manifest row {row!r}")
            out.append(ManifestEntry(row[0], float(row[1]), float(row[2]),
                                     float(row[3]), row[4], row[5]))
    return out
