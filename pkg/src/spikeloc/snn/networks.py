"""Spiking network backends mapping coincidence patterns to 360 output rates.

Two architectures:

* RecurrentSpikingNet -- the per-pair channel patterns are concatenated along
  the delay axis into one (n_channels x 6*n_delays) sequence and fed column
  by column; a recurrent hidden LIF layer integrates the sequence and a
  readout layer of 360 neurons accumulates spikes.
* ConvSpikingNet -- the six patterns are stacked as image planes of a
  (6, n_delays, n_channels) tensor and presented as a constant input current
  for a fixed number of steps to a stack of spiking conv stages
  (12/24/48/96 channels, kernel 3, stride 2, padding 1), a spiking
  fully-connected stage of 512 units, and the 360-neuron readout.

Output rates are raw spike counts per readout neuron, one neuron per integer
degree of azimuth.  The readout layer may carry its own LIF constants
(readout_lif): a long readout time constant with a small threshold turns each
output neuron into an evidence integrator whose spike count is roughly linear
in its accumulated input, which trains far better than a fast-leaking readout
that only ever sees the last few steps.  Both forwards accept relaxed=True,
which swaps the hard spike for its continuous ramp stand-in everywhere (see
neurons.spike_ramp) so the whole pass is differentiable without surrogate
tricks -- used for gradient verification, never for deployment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .neurons import LIFParams, LIFState, lif_step, relaxed_lif_step

N_OUTPUTS = 360


@dataclass(eq=False)
class SpikeTraces:
    """Recorded per-step activity of the last hidden layer and the readout."""

    hidden_potentials: torch.Tensor | None = None
    hidden_spikes: torch.Tensor | None = None
    readout_potentials: torch.Tensor | None = None
    readout_spikes: torch.Tensor | None = None


def pattern_to_sequence(pattern) -> np.ndarray:
    """Tandem a MultiPairPattern's counts into (n_channels, n_pairs*n_delays)."""
    return np.concatenate([p.counts for p in pattern.patterns], axis=1)


def _uniform_fan_in(shape, fan_in: int, gen: torch.Generator) -> torch.Tensor:
    # zero-mean uniform with variance 1/fan_in => half-width sqrt(3/fan_in)
    a = math.sqrt(3.0 / fan_in)
    return torch.empty(shape).uniform_(-a, a, generator=gen)


class _IntegratorReadout:
    """Non-spiking ablation readout: per-step rate contribution is the
    membrane potential clamped to [0, 1], keeping rates in [0, steps]."""

    def __init__(self, params: LIFParams):
        self.beta = params.decay

    def step(self, v, current):
        v = self.beta * v + (1.0 - self.beta) * current
        return v, torch.clamp(v, min=0.0, max=1.0)


class RecurrentSpikingNet(nn.Module):
    """Recurrent spiking backend; one forward pass consumes a whole sequence.

    Input tensors hold raw coincidence counts shaped (batch, n_in, steps);
    input_scale converts counts to input currents.
    """

    arch_tag = "recurrent"

    def __init__(self, n_in: int = 40, n_hidden: int = 1024,
                 n_out: int = N_OUTPUTS, lif: LIFParams = LIFParams(),
                 readout_lif: LIFParams | None = None,
                 input_scale: float = 1.0, spiking_readout: bool = True,
                 seed: int = 0):
        super().__init__()
        if min(n_in, n_hidden, n_out) < 1:
            raise ValueError("layer sizes must be positive")
        if input_scale <= 0:
            raise ValueError("input_scale must be positive")
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.n_out = n_out
        self.lif = lif
        self.readout_lif = lif if readout_lif is None else readout_lif
        self.input_scale = float(input_scale)
        self.spiking_readout = bool(spiking_readout)
        gen = torch.Generator().manual_seed(seed)
        self.w_in = nn.Parameter(_uniform_fan_in((n_in, n_hidden), n_in, gen))
        self.w_rec = nn.Parameter(_uniform_fan_in((n_hidden, n_hidden),
                                                  n_hidden, gen))
        self.w_out = nn.Parameter(_uniform_fan_in((n_hidden, n_out),
                                                  n_hidden, gen))
        self.b_hidden = nn.Parameter(torch.zeros(n_hidden))
        self.b_out = nn.Parameter(torch.zeros(n_out))

    def prepare_input(self, patterns) -> torch.Tensor:
        """Stack MultiPairPatterns into a (batch, n_in, steps) count tensor."""
        seqs = []
        for p in patterns:
            seq = pattern_to_sequence(p)
            if seq.shape[0] != self.n_in:
                raise ValueError(f"pattern has {seq.shape[0]} channels, "
                                 f"net expects {self.n_in}")
            seqs.append(seq)
        return torch.tensor(np.stack(seqs), dtype=self.w_in.dtype)

    def simulation_steps(self, x: torch.Tensor) -> int:
        return int(x.shape[-1])

    def forward(self, x: torch.Tensor, record: bool = False,
                relaxed: bool = False):
        if x.ndim != 3 or x.shape[1] != self.n_in:
            raise ValueError(f"expected (batch, {self.n_in}, steps), "
                             f"got {tuple(x.shape)}")
        x = x.to(self.w_in.dtype) * self.input_scale
        batch, _, steps = x.shape
        dtype = self.w_in.dtype
        hidden = LIFState.zeros((batch, self.n_hidden), dtype=dtype)
        readout = LIFState.zeros((batch, self.n_out), dtype=dtype)
        v_hidden = hidden.potentials
        v_read = readout.potentials
        spikes_h = torch.zeros((batch, self.n_hidden), dtype=dtype)
        rates = torch.zeros((batch, self.n_out), dtype=dtype)
        integ = None if self.spiking_readout \
            else _IntegratorReadout(self.readout_lif)
        rec: dict[str, list] = {k: [] for k in
                                ("hp", "hs", "rp", "rs")} if record else None
        for t in range(steps):
            i_hidden = x[:, :, t] @ self.w_in + spikes_h @ self.w_rec \
                + self.b_hidden
            if relaxed:
                v_hidden, spikes_h = relaxed_lif_step(v_hidden, i_hidden,
                                                      self.lif)
            else:
                hidden, spikes_h = lif_step(hidden, i_hidden, self.lif)
                v_hidden = hidden.potentials
            i_read = spikes_h @ self.w_out + self.b_out
            if integ is not None:
                v_read, out_t = integ.step(v_read, i_read)
            elif relaxed:
                v_read, out_t = relaxed_lif_step(v_read, i_read,
                                                 self.readout_lif)
            else:
                readout, out_t = lif_step(readout, i_read, self.readout_lif)
                v_read = readout.potentials
            rates = rates + out_t
            if record:
                rec["hp"].append(v_hidden.detach().clone())
                rec["hs"].append(spikes_h.detach().clone())
                rec["rp"].append(v_read.detach().clone())
                rec["rs"].append(out_t.detach().clone())
        traces = None
        if record:
            traces = SpikeTraces(
                hidden_potentials=torch.stack(rec["hp"], dim=1),
                hidden_spikes=torch.stack(rec["hs"], dim=1),
                readout_potentials=torch.stack(rec["rp"], dim=1),
                readout_spikes=torch.stack(rec["rs"], dim=1))
        return rates, traces

    def hyperparams(self) -> dict[str, float]:
        return {
            "n_in": self.n_in, "n_hidden": self.n_hidden, "n_out": self.n_out,
            "tau_m": self.lif.tau_m, "threshold": self.lif.threshold,
            "dt": self.lif.dt, "refractory_steps": self.lif.refractory_steps,
            "readout_tau_m": self.readout_lif.tau_m,
            "readout_threshold": self.readout_lif.threshold,
            "readout_dt": self.readout_lif.dt,
            "readout_refractory_steps": self.readout_lif.refractory_steps,
            "input_scale": self.input_scale,
            "spiking_readout": int(self.spiking_readout),
        }


def sweep_clock_init(net: "RecurrentSpikingNet", n_clock: int = 64,
                     detect_threshold: float = 0.4,
                     energy_floor: float = 2.0) -> "RecurrentSpikingNet":
    """Rewire a RecurrentSpikingNet's hidden stage as a sweep clock plus
    per-phase energy detectors, in place.

    A plain rate readout of the hidden layer sums spikes over the whole
    sequence, so with unstructured recurrence the readout is blind to WHEN a
    hidden neuron fired -- yet in the tandem delay layout the azimuth lives
    almost entirely in which sequence columns are active.  This initializer
    makes hidden spike counts position-sensitive by construction:

    * Neurons 0..n_clock-1 form a feedforward chain.  Neuron 0 carries a
      suprathreshold tonic bias, so it fires on the first step (all
      potentials start at zero) and launches a single activity bump that
      travels one neuron per step.  Every later chain neuron inhibits neuron
      0, which suppresses re-seeding until the bump has left the chain; the
      sweep then restarts, giving an exact period of n_clock + 1 steps.
    * Neurons n_clock..2*n_clock-1 are coincidence detectors, one per clock
      phase.  Detector j receives a gate from clock neuron j and the summed
      input current of all channels, against a strongly negative bias.  The
      weights are solved so the detector fires on a gated step if and only
      if the input-column energy exceeds detect_threshold (input units, so
      callers should feed normalized counts with input_scale = 1; the
      defaults assume column energies at most 1, as rsnn_input scaling
      guarantees): the gate alone leaves the potential just under
      threshold, and column energy on ungated steps can never reach
      threshold as long as it stays below energy_floor.

    Hidden counts then read out, per phase, how many of that phase's sweep
    visits found an active input column -- a compact position histogram that
    a linear readout separates easily.  The readout weights are left
    untouched for training.  Requires n_hidden >= 2*n_clock; surplus neurons
    keep their random wiring.  Returns the net for chaining.
    """
    if n_clock < 2:
        raise ValueError("n_clock must be at least 2")
    if net.n_hidden < 2 * n_clock:
        raise ValueError(f"need n_hidden >= {2 * n_clock} for "
                         f"n_clock={n_clock}, got {net.n_hidden}")
    if not 0 < detect_threshold < energy_floor:
        raise ValueError("need 0 < detect_threshold < energy_floor")
    theta = net.lif.threshold
    q = 1.0 - net.lif.decay  # per-step charge fraction of a constant current
    with torch.no_grad():
        C = n_clock
        net.w_in[:, :2 * C] = 0.0
        net.w_rec[:, :2 * C] = 0.0
        net.w_rec[:2 * C, :] = 0.0
        net.b_hidden[:2 * C] = 0.0
        # clock: tonic seed, bump chain, and re-seed suppression
        net.b_hidden[0] = 1.2 * theta / q
        for i in range(C - 1):
            net.w_rec[i, i + 1] = 1.5 * theta / q
        net.w_rec[1:C, 0] = -30.0 * theta / q
        # detectors: gate + summed channel energy against a deep bias;
        # gated crossing exactly at detect_threshold
        kappa = energy_floor + theta / q - detect_threshold
        for p in range(C):
            j = C + p
            net.w_in[:, j] = 1.0
            net.w_rec[p, j] = kappa
            net.b_hidden[j] = -energy_floor
    return net


class ConvSpikingNet(nn.Module):
    """Convolutional spiking backend over stacked pair patterns.

    Input tensors hold raw counts shaped (batch, n_pairs, n_delays,
    n_channels); they are divided by count_norm and clamped to [0, 1], then
    presented as a constant current for `steps` simulation steps.
    """

    arch_tag = "conv"
    stage_channels = (12, 24, 48, 96)

    def __init__(self, n_pairs: int = 6, n_delays: int = 51,
                 n_channels: int = 40, n_out: int = N_OUTPUTS,
                 lif: LIFParams = LIFParams(),
                 readout_lif: LIFParams | None = None, steps: int = 10,
                 count_norm: float = 1.0, fc_units: int = 512,
                 spiking_readout: bool = True, seed: int = 0):
        super().__init__()
        if steps < 1:
            raise ValueError("steps must be positive")
        if count_norm <= 0:
            raise ValueError("count_norm must be positive")
        self.n_pairs = n_pairs
        self.n_delays = n_delays
        self.n_channels = n_channels
        self.n_out = n_out
        self.lif = lif
        self.readout_lif = lif if readout_lif is None else readout_lif
        self.steps = int(steps)
        self.count_norm = float(count_norm)
        self.fc_units = fc_units
        self.spiking_readout = bool(spiking_readout)
        gen = torch.Generator().manual_seed(seed)
        convs = []
        in_ch = n_pairs
        h, w = n_delays, n_channels
        for out_ch in self.stage_channels:
            conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(_uniform_fan_in(conv.weight.shape,
                                                  in_ch * 9, gen))
                conv.bias.zero_()
            convs.append(conv)
            in_ch = out_ch
            h, w = (h + 1) // 2, (w + 1) // 2
        self.convs = nn.ModuleList(convs)
        self.flat_features = in_ch * h * w
        self.fc_hidden = nn.Linear(self.flat_features, fc_units)
        self.fc_out = nn.Linear(fc_units, n_out)
        with torch.no_grad():
            self.fc_hidden.weight.copy_(_uniform_fan_in(
                self.fc_hidden.weight.shape, self.flat_features, gen))
            self.fc_hidden.bias.zero_()
            self.fc_out.weight.copy_(_uniform_fan_in(
                self.fc_out.weight.shape, fc_units, gen))
            self.fc_out.bias.zero_()

    def prepare_input(self, patterns) -> torch.Tensor:
        """Stack MultiPairPatterns into (batch, n_pairs, n_delays, n_channels)."""
        mats = []
        for p in patterns:
            counts = p.stacked()  # (n_pairs, n_channels, n_delays)
            if counts.shape != (self.n_pairs, self.n_channels, self.n_delays):
                raise ValueError(f"pattern shape {counts.shape} does not match "
                                 f"({self.n_pairs}, {self.n_channels}, "
                                 f"{self.n_delays})")
            mats.append(counts.transpose(0, 2, 1))
        dtype = self.fc_out.weight.dtype
        return torch.tensor(np.stack(mats), dtype=dtype)

    def simulation_steps(self, x: torch.Tensor | None = None) -> int:
        return self.steps

    def forward(self, x: torch.Tensor, record: bool = False,
                relaxed: bool = False, steps: int | None = None):
        expect = (self.n_pairs, self.n_delays, self.n_channels)
        if x.ndim != 4 or tuple(x.shape[1:]) != expect:
            raise ValueError(f"expected (batch, {expect[0]}, {expect[1]}, "
                             f"{expect[2]}), got {tuple(x.shape)}")
        steps = self.steps if steps is None else int(steps)
        dtype = self.fc_out.weight.dtype
        drive = torch.clamp(x.to(dtype) / self.count_norm, min=0.0, max=1.0)
        batch = x.shape[0]
        n_stages = len(self.convs) + 1  # convs plus the spiking fc stage

        # lazily created per-stage membrane state (shapes depend on the input)
        stage_v: list = [None] * n_stages
        stage_state: list[LIFState | None] = [None] * n_stages
        integ = None if self.spiking_readout \
            else _IntegratorReadout(self.readout_lif)
        read_state = LIFState.zeros((batch, self.n_out), dtype=dtype)
        v_read = read_state.potentials
        rates = torch.zeros((batch, self.n_out), dtype=dtype)
        rec: dict[str, list] = {k: [] for k in
                                ("hp", "hs", "rp", "rs")} if record else None

        def run_stage(k, current):
            if relaxed:
                v = stage_v[k]
                v = torch.zeros_like(current) if v is None else v
                v, s = relaxed_lif_step(v, current, self.lif)
                stage_v[k] = v
                return s, v
            state = stage_state[k]
            if state is None:
                state = LIFState.zeros(current.shape, dtype=dtype)
            state, s = lif_step(state, current, self.lif)
            stage_state[k] = state
            return s, state.potentials

        for _ in range(steps):
            act = drive
            for k, conv in enumerate(self.convs):
                act, _ = run_stage(k, conv(act))
            act = act.reshape(batch, -1)
            act, v_fc = run_stage(n_stages - 1, self.fc_hidden(act))
            i_read = self.fc_out(act)
            if integ is not None:
                v_read, out_t = integ.step(v_read, i_read)
            elif relaxed:
                v_read, out_t = relaxed_lif_step(v_read, i_read,
                                                 self.readout_lif)
            else:
                read_state, out_t = lif_step(read_state, i_read,
                                             self.readout_lif)
                v_read = read_state.potentials
            rates = rates + out_t
            if record:
                rec["hp"].append(v_fc.detach().clone())
                rec["hs"].append(act.detach().clone())
                rec["rp"].append(v_read.detach().clone())
                rec["rs"].append(out_t.detach().clone())
        traces = None
        if record:
            traces = SpikeTraces(
                hidden_potentials=torch.stack(rec["hp"], dim=1),
                hidden_spikes=torch.stack(rec["hs"], dim=1),
                readout_potentials=torch.stack(rec["rp"], dim=1),
                readout_spikes=torch.stack(rec["rs"], dim=1))
        return rates, traces

    def hyperparams(self) -> dict[str, float]:
        return {
            "n_pairs": self.n_pairs, "n_delays": self.n_delays,
            "n_channels": self.n_channels, "n_out": self.n_out,
            "tau_m": self.lif.tau_m, "threshold": self.lif.threshold,
            "dt": self.lif.dt, "refractory_steps": self.lif.refractory_steps,
            "readout_tau_m": self.readout_lif.tau_m,
            "readout_threshold": self.readout_lif.threshold,
            "readout_dt": self.readout_lif.dt,
            "readout_refractory_steps": self.readout_lif.refractory_steps,
            "steps": self.steps, "count_norm": self.count_norm,
            "fc_units": self.fc_units,
            "spiking_readout": int(self.spiking_readout),
        }


def rsnn_forward(pattern, net: RecurrentSpikingNet):
    """Single-pattern convenience forward: returns (rates array, traces)."""
    x = net.prepare_input([pattern])
    with torch.no_grad():
        rates, traces = net(x, record=True)
    return rates[0].cpu().numpy(), traces


def csnn_forward(pattern, net: ConvSpikingNet, steps: int | None = None):
    """Single-pattern convenience forward: returns (rates array, traces)."""
    x = net.prepare_input([pattern])
    with torch.no_grad():
        rates, traces = net(x, record=True, steps=steps)
    return rates[0].cpu().numpy(), traces


def calibrate_input_scale(count_tensors, threshold: float = 1.0) -> float:
    """Scale so the mean nonzero input count maps to threshold/2."""
    vals = []
    for c in count_tensors:
        arr = np.asarray(c, dtype=float)
        vals.append(arr[arr > 0])
    nz = np.concatenate(vals) if vals else np.array([])
    if nz.size == 0:
        raise ValueError("cannot calibrate on an all-zero dataset")
    return float(threshold / (2.0 * nz.mean()))


def calibrate_count_norm(count_tensors, percentile: float = 95.0) -> float:
    """The chosen percentile of the positive counts (>= 1), for CSNN input."""
    vals = []
    for c in count_tensors:
        arr = np.asarray(c, dtype=float)
        vals.append(arr[arr > 0])
    nz = np.concatenate(vals) if vals else np.array([])
    if nz.size == 0:
        raise ValueError("cannot calibrate on an all-zero dataset")
    return float(max(np.percentile(nz, percentile), 1.0))
