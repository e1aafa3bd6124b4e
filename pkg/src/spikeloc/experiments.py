"""Desk-scale experiment recipes: dataset synthesis, batch encoding, training
runs, encoder-resolution sweeps, and noise-robustness comparisons.

Everything here is deterministic given the seeds passed in.  Clips are built
once and re-encoded per encoder configuration so that sweep points differ
only in the encoding, never in the audio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .arraysim import (
    DirectionalNoise,
    MicArrayGeometry,
    MultiChannelClip,
    MultiTone,
    NoiseBurst,
    SourceSpec,
    add_noise,
    clip_windows,
    synthesize_clip,
)
from .baseline import gcc_phat
from .encoder import EncoderConfig, encode_multipair
from .metrics import label_matrix
from .snn import (
    LIFParams,
    RecurrentSpikingNet,
    TrainLogRow,
    best_eval_mae,
    evaluate_net,
    sweep_clock_init,
    train_model,
)

DESK_TONES = (250.0, 500.0, 750.0, 1000.0)
SAMPLE_RATE = 16000.0
WINDOW_S = 0.170
STRIDE_S = 0.085


def desk_geometry(side_m: float = 0.25) -> MicArrayGeometry:
    """Square capture array large enough that delay lines resolve azimuth."""
    return MicArrayGeometry.square(side_m=side_m)


def duration_for_windows(n_windows: int, window_s: float = WINDOW_S,
                         stride_s: float = STRIDE_S,
                         sample_rate: float = SAMPLE_RATE) -> float:
    """Shortest clip duration that yields exactly n_windows analysis windows."""
    if n_windows < 1:
        raise ValueError("need at least one window")
    samples = round((n_windows - 1) * stride_s * sample_rate
                    + window_s * sample_rate)
    return samples / sample_rate


def build_clips(geometry: MicArrayGeometry, azimuths, *, windows_per_source: int,
                distance_m: float = 1.5, tones=DESK_TONES,
                include_burst: bool = True, snr_db: float = 20.0,
                snr_range: tuple[float, float] | None = None,
                noise_azimuths=None, noise_distance_m: float = 1.5,
                seed: int = 0) -> list[MultiChannelClip]:
    """Synthesize one noisy clip per (azimuth, source kind).

    Each azimuth gets a multi-tone clip (random tone phases) and, when
    include_burst is set, a white-burst clip.  Noise is white unless
    noise_azimuths is given, in which case a directional white interferer is
    placed at the listed azimuths in rotation.  snr_range, when given,
    overrides snr_db with a per-clip uniform draw.
    """
    rng = np.random.default_rng(seed)
    duration = duration_for_windows(windows_per_source)
    clips = []
    for idx, az in enumerate(azimuths):
        signals = [MultiTone.equal_amplitude(
            tones, rng.uniform(0.0, 2.0 * np.pi, size=len(tones)))]
        if include_burst:
            signals.append(NoiseBurst())
        for sig in signals:
            src = SourceSpec(float(az), distance_m, sig,
                             seed=int(rng.integers(2**31)))
            clip = synthesize_clip(geometry, src, duration, SAMPLE_RATE)
            level = snr_db if snr_range is None else float(
                rng.uniform(*snr_range))
            if noise_azimuths is None:
                kind = "white"
            else:
                noise_az = float(noise_azimuths[idx % len(noise_azimuths)])
                noise_src = SourceSpec(noise_az, noise_distance_m, NoiseBurst(),
                                       seed=int(rng.integers(2**31)))
                kind = DirectionalNoise(noise_src, geometry)
            clips.append(add_noise(clip, level, kind=kind,
                                   seed=int(rng.integers(2**31))))
    return clips


@dataclass(eq=False)
class EncodedDataset:
    """Stacked coincidence counts with one azimuth label per window."""

    counts: np.ndarray          # (n, n_pairs, n_channels, n_delays) uint16
    azimuths: np.ndarray        # (n,)
    config: EncoderConfig = field(default_factory=EncoderConfig)

    def __len__(self) -> int:
        return self.counts.shape[0]


def encode_clips(clips, config: EncoderConfig = EncoderConfig(),
                 window_s: float = WINDOW_S,
                 stride_s: float = STRIDE_S) -> EncodedDataset:
    """Window every clip and encode each window to a coincidence pattern."""
    counts, azimuths = [], []
    for clip in clips:
        for window in clip_windows(clip, window_s, stride_s):
            pattern = encode_multipair(window, config)
            counts.append(pattern.stacked().astype(np.uint16))
            azimuths.append(window.label_azimuth)
    if not counts:
        raise ValueError("no analysis windows produced")
    return EncodedDataset(np.stack(counts), np.asarray(azimuths, dtype=float),
                          config)


def rsnn_input(counts: np.ndarray) -> torch.Tensor:
    """Counts (n, pairs, channels, delays) -> (n, channels, pairs*delays).

    Each window is divided by its peak column total (the largest
    channel-summed count over all pairs and delay taps), rounded up to a
    power of two.  Column totals are invariant to how finely the spectrum
    is split into channels -- pooling only repartitions the same per-tone
    coincidence trains -- so this scaling makes the summed column energy
    the network integrates land in (0.5, 1] for the strongest column of
    every window, whatever the channel count or signal level.  The
    power-of-two divisor keeps counts exactly representable, so channel
    sums downstream are order-independent.  All-zero windows pass through
    unchanged.
    """
    n, n_pairs = counts.shape[:2]
    seq = np.concatenate([counts[:, k] for k in range(n_pairs)],
                         axis=2).astype(np.float32)
    peak = counts.sum(axis=2, dtype=np.int64).reshape(n, -1).max(axis=1)
    scale = np.exp2(np.ceil(np.log2(np.maximum(peak, 1)))).astype(np.float32)
    return torch.tensor(seq / scale[:, None, None])


def csnn_input(counts: np.ndarray) -> torch.Tensor:
    """Counts (n, pairs, channels, delays) -> (n, pairs, delays, channels)."""
    return torch.tensor(counts.transpose(0, 1, 3, 2), dtype=torch.float32)


def pairwise_argmax(counts: np.ndarray) -> np.ndarray:
    """Per-pair winning delay column, channels summed out.

    Accepts (pairs, channels, delays) or a batch (n, pairs, channels, delays);
    returns signed delays in samples (column index minus the center tap).
    """
    arr = np.asarray(counts)
    if arr.ndim == 3:
        return pairwise_argmax(arr[None])[0]
    if arr.ndim != 4:
        raise ValueError("expected (pairs, channels, delays) counts")
    half = (arr.shape[-1] - 1) // 2
    return arr.sum(axis=2).argmax(axis=2) - half


@dataclass(eq=False)
class RunSummary:
    """One trained backend plus its held-out score."""

    seed: int
    best_mae_deg: float
    rows: list[TrainLogRow]
    net: RecurrentSpikingNet


# Recurrent-backend recipe constants.  Hidden neurons leak fast so detector
# decisions stay crisp; the readout integrates slowly so every detection,
# early or late in the sequence, lands in the output with similar weight.
RSNN_HIDDEN_LIF = LIFParams(tau_m=4.0)
RSNN_READOUT_LIF = LIFParams(tau_m=50.0, threshold=1.0)
RIDGE_LAMBDA = 0.1
LABEL_GAIN = 0.05    # Gaussian label peak at the readout operating point
LABEL_OFFSET = 0.25  # baseline readout potential, keeps rates off the floor


def hidden_sum_features(net: RecurrentSpikingNet, x: torch.Tensor,
                        batch_size: int = 256,
                        kernel: torch.Tensor | None = None) -> np.ndarray:
    """Per-window hidden spike totals, optionally kernel-weighted over time.

    With the readout's response kernel (1 - decay^(steps - t)) this equals
    each hidden neuron's exact contribution per unit readout weight to the
    accumulated output of a never-clamping integrator readout.
    """
    outs = []
    with torch.no_grad():
        for lo in range(0, x.shape[0], batch_size):
            _, traces = net(x[lo:lo + batch_size], record=True)
            spikes = traces.hidden_spikes  # (batch, steps, n_hidden)
            if kernel is None:
                outs.append(spikes.sum(dim=1).numpy())
            else:
                outs.append((spikes * kernel[None, :, None]).sum(dim=1).numpy())
    return np.concatenate(outs)


def readout_response_kernel(net: RecurrentSpikingNet, steps: int) -> torch.Tensor:
    """Weight of a step-t hidden spike in the readout's accumulated output."""
    beta = net.readout_lif.decay
    t = np.arange(steps)
    return torch.tensor((1.0 - beta ** (steps - t)).astype(np.float32))


def ridge_init_readout(net: RecurrentSpikingNet, x: torch.Tensor,
                       azimuths: np.ndarray, n_clock: int,
                       sigma_deg: float = 8.0) -> None:
    """Fit the readout weights in closed form against the detector features.

    One recorded forward pass yields each detector's kernel-weighted spike
    total; a ridge fit maps those features to the Gaussian azimuth curves,
    and the solution is written into w_out/b_out at the training operating
    point (LABEL_GAIN peak over a LABEL_OFFSET baseline).  Clock neurons
    carry no azimuth information, so their readout rows are zeroed.
    """
    steps = int(x.shape[-1])
    kernel = readout_response_kernel(net, steps)
    feats = hidden_sum_features(net, x, kernel=kernel)
    det = feats[:, n_clock:2 * n_clock].astype(np.float64)
    targets = label_matrix(azimuths, sigma_deg)
    a = np.concatenate([det, np.ones((len(det), 1))], axis=1)
    w = np.linalg.solve(a.T @ a + RIDGE_LAMBDA * np.eye(a.shape[1]),
                        a.T @ targets)
    beta = net.readout_lif.decay
    bias_weight = steps - beta * (1.0 - beta ** steps) / (1.0 - beta)
    with torch.no_grad():
        net.w_out.zero_()
        net.w_out[n_clock:2 * n_clock].copy_(torch.tensor(
            steps * LABEL_GAIN * w[:-1], dtype=net.w_out.dtype))
        net.b_out.copy_(torch.tensor(
            steps * (LABEL_GAIN * w[-1] + LABEL_OFFSET) / bias_weight,
            dtype=net.b_out.dtype))


def train_rsnn(train: EncodedDataset, test: EncodedDataset, *,
               n_hidden: int = 128, seed: int = 0, epochs: int = 10,
               batch_size: int = 128, lr: float = 1e-3,
               target_mae_deg: float | None = None, log_path=None,
               checkpoint_path=None) -> RunSummary:
    """Train a recurrent backend on an encoded split and score the other.

    The hidden stage is wired as a sweep clock with per-phase energy
    detectors (see snn.sweep_clock_init), whose spike counts a linear
    readout separates; the readout starts from a closed-form ridge fit and
    is then polished with BPTT, stopping early once target_mae_deg is
    reached.  The hidden wiring stays fixed during the polish: its weights
    are solved, not sampled, and gradient noise only erodes them.
    """
    n_clock = min(64, n_hidden // 2)
    net = RecurrentSpikingNet(n_in=train.config.channels, n_hidden=n_hidden,
                              lif=RSNN_HIDDEN_LIF,
                              readout_lif=RSNN_READOUT_LIF,
                              input_scale=1.0, spiking_readout=False,
                              seed=seed)
    sweep_clock_init(net, n_clock=n_clock)
    x_train = rsnn_input(train.counts)
    x_test = rsnn_input(test.counts)
    ridge_init_readout(net, x_train, train.azimuths, n_clock)
    rows = train_model(net, x_train, train.azimuths, x_test, test.azimuths,
                       epochs=epochs, batch_size=batch_size, lr=lr, seed=seed,
                       target_mae_deg=target_mae_deg,
                       label_gain=LABEL_GAIN, label_offset=LABEL_OFFSET,
                       parameters=[net.w_out, net.b_out],
                       log_path=log_path, checkpoint_path=checkpoint_path)
    return RunSummary(seed, best_eval_mae(rows), rows, net)


def evaluate_rsnn(net: RecurrentSpikingNet, dataset: EncodedDataset) -> float:
    """Held-out circular MAE of a trained recurrent backend."""
    _, mae, _ = evaluate_net(net, rsnn_input(dataset.counts), dataset.azimuths)
    return mae


@dataclass(frozen=True)
class SweepRow:
    """One sweep point: encoder resolution, seed, held-out MAE."""

    delay_lines: int
    channels: int
    seed: int
    mae_deg: float


def run_encoder_sweep(train_clips, test_clips, configs, seeds=(0, 1, 2), *,
                      n_hidden: int = 128, epochs: int = 10,
                      batch_size: int = 128, lr: float = 1e-3,
                      progress=None) -> list[SweepRow]:
    """Re-encode the same audio per config and train paired seeds on each."""
    rows = []
    for config in configs:
        train = encode_clips(train_clips, config)
        test = encode_clips(test_clips, config)
        for seed in seeds:
            run = train_rsnn(train, test, n_hidden=n_hidden, seed=seed,
                             epochs=epochs, batch_size=batch_size, lr=lr)
            rows.append(SweepRow(config.delay_lines, config.channels, seed,
                                 run.best_mae_deg))
            if progress is not None:
                progress(rows[-1])
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("delay_lines,channels,seed,mae_deg\n")
        for r in rows:
            fh.write(f"{r.delay_lines},{r.channels},{r.seed},{r.mae_deg!r}\n")


def encoder_phat_agreement(clips, config: EncoderConfig = EncoderConfig(),
                           tolerance_samples: float = 1.0) -> float:
    """Fraction of (window, pair) cases where the coincidence argmax delay
    lies within tolerance of the whitened cross-correlation estimate."""
    half = config.delay_lines // 2
    agree = total = 0
    for clip in clips:
        fs = clip.sample_rate
        for window in clip_windows(clip, WINDOW_S, STRIDE_S):
            pattern = encode_multipair(window, config)
            delays = pairwise_argmax(pattern.stacked())
            for (i, j), mtpc in zip(pattern.pair_order, delays):
                est = gcc_phat(window.samples[i], window.samples[j], fs,
                               max_lag_s=half / fs)
                total += 1
                agree += abs(mtpc - est.delay * fs) <= tolerance_samples
    if total == 0:
        raise ValueError("no windows to compare")
    return agree / total
