"""Multi-tone phase coding: turn a multichannel window into spike patterns.

Pipeline per analysis window:
  1. analyze_tones      -- N-point FFT of one channel; bins 1..N/2 become a
                           bank of sinusoids y_i(t) = A_i sin(2*pi*f_i*t + phi_i)
  2. phase_to_spike     -- each sufficiently loud tone emits one spike at the
                           first peak time of its sinusoid
  3. coincidence_detect -- a delay-line bank compares two channels' spike
                           trains per tone; matching delays fire
  4. group_channels     -- tone rows are pooled into cochlear channels on an
                           ERB-rate frequency scale
  5. encode_multipair   -- steps 1-4 for every unordered mic pair

The spike time for a tone is t = ((pi/2 - phi) mod 2*pi) / (2*pi*f), the first
time in [0, 1/f) at which the sinusoid attains its maximum.  Between two mics
hearing the same source, spike-time differences equal the arrival-time
difference modulo the tone period, which is what the coincidence stage reads
out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi

ENCODER_CONFIG_KEYS = ("fft_points", "delay_lines", "channels", "floor_db",
                       "f_low_hz")


@dataclass(frozen=True)
class EncoderConfig:
    """Knobs for the whole encoding chain."""

    fft_points: int = 1024
    delay_lines: int = 51
    channels: int = 40
    floor_db: float = 40.0
    f_low_hz: float = 50.0

    def __post_init__(self):
        if self.fft_points < 2 or (self.fft_points & (self.fft_points - 1)):
            raise ValueError("fft_points must be a power of two >= 2")
        if self.delay_lines < 1 or self.delay_lines % 2 == 0:
            raise ValueError("delay_lines must be odd and positive")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.floor_db <= 0:
            raise ValueError("floor_db must be positive")
        if self.f_low_hz <= 0:
            raise ValueError("f_low_hz must be positive")


def write_encoder_config(path: str | Path, config: EncoderConfig) -> None:
    """Write the flat key=value config file format."""
    lines = [f"{k}={getattr(config, k)}" for k in ENCODER_CONFIG_KEYS]
    Path(path).write_text("\n".join(lines) + "\n")


def read_encoder_config(path: str | Path) -> EncoderConfig:
    """Parse the flat key=value format; unknown keys are rejected."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in ENCODER_CONFIG_KEYS:
            raise ValueError(f"unknown encoder config key {key!r}")
        values[key] = val.strip()
    kwargs = {}
    for k in ("fft_points", "delay_lines", "channels"):
        if k in values:
            kwargs[k] = int(values[k])
    for k in ("floor_db", "f_low_hz"):
        if k in values:
            kwargs[k] = float(values[k])
    return EncoderConfig(**kwargs)


@dataclass(frozen=True, eq=False)
class ToneSpectrum:
    """One window's tone bank: N/2 sinusoids from FFT bins 1..N/2.

    phases follow the four-quadrant convention phi = atan2(Im X, Re X) of the
    raw (unnormalized) FFT coefficients.
    """

    frequencies: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    fft_points: int
    sample_rate: float

    def __post_init__(self):
        n = self.fft_points // 2
        if not (len(self.frequencies) == len(self.amplitudes)
                == len(self.phases) == n):
            raise ValueError("tone arrays must have length fft_points/2")


def analyze_tones(window: np.ndarray, fft_points: int,
                  sample_rate: float) -> ToneSpectrum:
    """FFT frequency analysis of one channel's window.

    Uses the first fft_points samples.  Bin i (1-based, DC excluded, Nyquist
    included) maps to frequency f_i = (i/N) * sample_rate, amplitude
    A_i = |X_i| and phase phi_i = atan2(Im X_i, Re X_i).
    """
    x = np.asarray(window, dtype=float)
    if x.ndim != 1:
        raise ValueError("analyze_tones expects a single channel")
    if fft_points < 2 or (fft_points & (fft_points - 1)):
        raise ValueError("fft_points must be a power of two >= 2")
    if x.shape[0] < fft_points:
        raise ValueError(f"window has {x.shape[0]} samples, "
                         f"needs at least {fft_points}")
    spec = np.fft.fft(x[:fft_points])[1:fft_points // 2 + 1]
    idx = np.arange(1, fft_points // 2 + 1)
    return ToneSpectrum(
        frequencies=idx * sample_rate / fft_points,
        amplitudes=np.abs(spec),
        phases=np.arctan2(spec.imag, spec.real),
        fft_points=fft_points,
        sample_rate=float(sample_rate),
    )


@dataclass(frozen=True, eq=False)
class PhaseSpikeTrain:
    """At most one spike per tone: times in seconds, NaN where suppressed."""

    times: np.ndarray
    frequencies: np.ndarray

    @property
    def fired(self) -> np.ndarray:
        return ~np.isnan(self.times)


def phase_to_spike(spectrum: ToneSpectrum, floor_db: float = 40.0) -> PhaseSpikeTrain:
    """First-peak spike times for every tone above the amplitude floor.

    A tone fires iff its amplitude is within floor_db (in dB) of the loudest
    tone in the window; the spike lands at the first maximum of
    A*sin(2*pi*f*t + phi), i.e. t = ((pi/2 - phi) mod 2*pi) / (2*pi*f),
    guaranteed inside [0, 1/f).
    """
    if floor_db <= 0:
        raise ValueError("floor_db must be positive")
    amps = spectrum.amplitudes
    peak = amps.max() if amps.size else 0.0
    times = np.full(amps.shape, np.nan)
    if peak > 0:
        audible = amps >= peak * 10.0 ** (-floor_db / 20.0)
        f = spectrum.frequencies[audible]
        phi = spectrum.phases[audible]
        times[audible] = ((np.pi / 2 - phi) % TWO_PI) / (TWO_PI * f)
    return PhaseSpikeTrain(times=times, frequencies=spectrum.frequencies.copy())


@dataclass(frozen=True)
class DelayLineBank:
    """Symmetric bank of 2d+1 delay taps tau_k = k/sample_rate, k = -d..d."""

    d: int
    sample_rate: float
    tolerance: float | None = None  # seconds; default half a sample period

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("d must be non-negative")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if self.tolerance is not None and self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")

    @classmethod
    def from_count(cls, n_delays: int, sample_rate: float) -> "DelayLineBank":
        if n_delays < 1 or n_delays % 2 == 0:
            raise ValueError("delay-line count must be odd and positive")
        return cls(d=(n_delays - 1) // 2, sample_rate=sample_rate)

    @property
    def n_delays(self) -> int:
        return 2 * self.d + 1

    @property
    def delays(self) -> np.ndarray:
        return np.arange(-self.d, self.d + 1) / self.sample_rate

    @property
    def effective_tolerance(self) -> float:
        return (self.tolerance if self.tolerance is not None
                else 0.5 / self.sample_rate)


@dataclass(frozen=True, eq=False)
class CoincidencePattern:
    """Binary tone-by-delay matrix: entry (i, k) says tone i fired at tap k."""

    matrix: np.ndarray  # (n_tones, n_delays) uint8
    delays: np.ndarray  # (n_delays,) seconds
    frequencies: np.ndarray  # (n_tones,) Hz


def coincidence_detect(reference: PhaseSpikeTrain, other: PhaseSpikeTrain,
                       bank: DelayLineBank) -> CoincidencePattern:
    """Jeffress-style coincidence detection between two spike trains.

    Entry (i, k) fires iff both trains carry a spike for tone i and
    t_ref,i - (t_other,i + tau_k) is congruent to zero modulo the tone period
    1/f_i within the bank tolerance.  All congruent taps fire -- the period
    ambiguity is intentional and is averaged out downstream by channel
    pooling across tones.
    """
    if len(reference.times) != len(other.times) or not np.array_equal(
            reference.frequencies, other.frequencies):
        raise ValueError("spike trains come from different tone grids")
    freqs = reference.frequencies
    taus = bank.delays
    tol = bank.effective_tolerance
    both = reference.fired & other.fired
    diff = (reference.times[:, None] - other.times[:, None]) - taus[None, :]
    periods = (1.0 / freqs)[:, None]
    # circular distance of diff to the nearest multiple of the period
    dist = np.abs((diff + periods / 2) % periods - periods / 2)
    matrix = ((dist <= tol) & both[:, None]).astype(np.uint8)
    return CoincidencePattern(matrix=matrix, delays=taus.copy(),
                              frequencies=freqs.copy())


def erb_rate(f_hz):
    """Glasberg & Moore ERB-rate scale (ERB count below f)."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f_hz, dtype=float))


def erb_rate_inverse(e):
    return (10.0 ** (np.asarray(e, dtype=float) / 21.4) - 1.0) / 0.00437


def cochlear_channels(n_channels: int, f_low_hz: float,
                      f_high_hz: float) -> np.ndarray:
    """n_channels+1 band edges, uniformly spaced on the ERB-rate scale.

    Edges are strictly increasing and widths never shrink with frequency.
    """
    if n_channels < 1:
        raise ValueError("need at least one channel")
    if not (0 < f_low_hz < f_high_hz):
        raise ValueError("need 0 < f_low < f_high")
    edges = erb_rate_inverse(np.linspace(erb_rate(f_low_hz),
                                         erb_rate(f_high_hz),
                                         n_channels + 1))
    edges[0] = f_low_hz  # pin endpoints against round-trip float drift
    edges[-1] = f_high_hz
    return edges


@dataclass(frozen=True, eq=False)
class ChannelPattern:
    """Coincidence counts pooled into cochlear channels: (n_channels, n_delays)."""

    counts: np.ndarray
    edges: np.ndarray  # (n_channels + 1,) Hz
    delays: np.ndarray  # (n_delays,) seconds


def group_channels(pattern: CoincidencePattern,
                   edges: np.ndarray) -> ChannelPattern:
    """Pool tone rows into cochlear channels by summing coincidence rows.

    Tone i lands in channel c iff edges[c] <= f_i < edges[c+1] (the top band
    is closed above so f == edges[-1] is kept); tones outside [edges[0],
    edges[-1]] are dropped.  In-band spike counts are conserved.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing, length >= 2")
    n_channels = len(edges) - 1
    f = pattern.frequencies
    # right-closed top band: searchsorted puts f == edges[-1] into the last bin
    chan = np.searchsorted(edges, f, side="right") - 1
    chan[f == edges[-1]] = n_channels - 1
    counts = np.zeros((n_channels, pattern.matrix.shape[1]), dtype=np.int32)
    in_band = (chan >= 0) & (chan < n_channels)
    np.add.at(counts, chan[in_band], pattern.matrix[in_band].astype(np.int32))
    return ChannelPattern(counts=counts, edges=edges.copy(),
                          delays=pattern.delays.copy())


@dataclass(frozen=True, eq=False)
class MultiPairPattern:
    """One window's encoding: a ChannelPattern per unordered mic pair.

    pair (i, j) with i < j uses mic i as the coincidence reference, so the
    pattern's delay axis reads as the arrival-time difference T_i - T_j.
    """

    patterns: tuple[ChannelPattern, ...]
    pair_order: tuple[tuple[int, int], ...]
    sample_rate: float
    label_azimuth: float | None = None

    def __post_init__(self):
        if len(self.patterns) != len(self.pair_order):
            raise ValueError("one pattern per pair")
        shapes = {p.counts.shape for p in self.patterns}
        if len(shapes) > 1:
            raise ValueError("pair patterns disagree on shape")

    @property
    def n_pairs(self) -> int:
        return len(self.patterns)

    def stacked(self) -> np.ndarray:
        """Counts as one (n_pairs, n_channels, n_delays) array."""
        return np.stack([p.counts for p in self.patterns])


def encode_multipair(clip, config: EncoderConfig = EncoderConfig()) -> MultiPairPattern:
    """Run the full encoding chain on every unordered channel pair of a clip.

    The clip needs at least two channels and at least fft_points samples.
    Pair order is lexicographic (0,1), (0,2), ... with the lower channel index
    as coincidence reference.
    """
    if clip.n_channels < 2:
        raise ValueError("need at least two channels to form pairs")
    fs = clip.sample_rate
    bank = DelayLineBank.from_count(config.delay_lines, fs)
    edges = cochlear_channels(config.channels, config.f_low_hz, fs / 2)
    trains = [phase_to_spike(analyze_tones(clip.samples[ch], config.fft_points, fs),
                             config.floor_db)
              for ch in range(clip.n_channels)]
    pairs = [(i, j) for i in range(clip.n_channels)
             for j in range(i + 1, clip.n_channels)]
    patterns = tuple(
        group_channels(coincidence_detect(trains[i], trains[j], bank), edges)
        for i, j in pairs)
    return MultiPairPattern(patterns=patterns, pair_order=tuple(pairs),
                            sample_rate=fs,
                            label_azimuth=clip.label_azimuth)
