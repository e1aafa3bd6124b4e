"""Leaky integrate-and-fire dynamics with a surrogate-gradient spike.

The membrane ODE tau_m dV/dt = -V + I is discretized with the
exponential-Euler rule V <- V*exp(-dt/tau_m) + I*(1 - exp(-dt/tau_m)), whose
fixed point for constant sub-threshold input is V = I.  Crossing the
threshold emits a unit spike, resets the potential to exactly 0 and starts a
refractory hold during which input is ignored and no spike can be emitted.

The spike nonlinearity is non-differentiable; its backward pass uses the
triangular pseudo-derivative max{0, 1 - |(V - theta)/theta|}, nonzero only
for V in (0, 2*theta).  spike_ramp is the exact antiderivative of that
triangle and stands in for the hard spike when a fully differentiable
("relaxed") forward pass is needed, e.g. to validate BPTT gradients against
finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LIFParams:
    """Neuron constants; tau_m and dt are in simulation steps."""

    tau_m: float = 10.0
    threshold: float = 1.0
    dt: float = 1.0
    refractory_steps: int = 1

    def __post_init__(self):
        if self.tau_m <= 0:
            raise ValueError("tau_m must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.refractory_steps < 0:
            raise ValueError("refractory_steps must be non-negative")

    @property
    def decay(self) -> float:
        return math.exp(-self.dt / self.tau_m)


@dataclass(eq=False)
class LIFState:
    """Per-neuron membrane potentials and refractory countdowns."""

    potentials: torch.Tensor
    refractory: torch.Tensor

    @classmethod
    def zeros(cls, shape, dtype=torch.float32, device=None) -> "LIFState":
        return cls(potentials=torch.zeros(shape, dtype=dtype, device=device),
                   refractory=torch.zeros(shape, dtype=torch.int64,
                                          device=device))


def surrogate_grad(v, threshold: float):
    """Triangular pseudo-derivative of the spike w.r.t. the potential."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    v = torch.as_tensor(v)
    return torch.clamp(1.0 - torch.abs((v - threshold) / threshold), min=0.0)


class _SpikeFunction(torch.autograd.Function):
    """Heaviside spike forward, triangular surrogate backward."""

    @staticmethod
    def forward(ctx, v, threshold):
        ctx.save_for_backward(v)
        ctx.threshold = threshold
        return (v >= threshold).to(v.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (v,) = ctx.saved_tensors
        return grad_output * surrogate_grad(v, ctx.threshold), None


def spike_fn(v: torch.Tensor, threshold: float) -> torch.Tensor:
    return _SpikeFunction.apply(v, threshold)


def spike_ramp(v: torch.Tensor, threshold: float) -> torch.Tensor:
    """C1 stand-in for the hard spike: rises 0 -> threshold over (0, 2*threshold).

    Its derivative is exactly surrogate_grad, so autograd through this ramp
    IS the surrogate-gradient rule, with no discontinuity for a
    finite-difference probe to trip over.
    """
    a = torch.clamp(v, min=0.0, max=threshold)
    b = torch.clamp(v - threshold, min=0.0, max=threshold)
    return a * a / (2.0 * threshold) + b - b * b / (2.0 * threshold)


def lif_step(state: LIFState, current: torch.Tensor,
             params: LIFParams) -> tuple[LIFState, torch.Tensor]:
    """Advance LIF neurons one step; returns the new state and 0/1 spikes.

    Refractory neurons ignore their input current, emit nothing, and count
    down.  Potentials are floored at 0 (inhibitory currents cannot push the
    membrane below rest), so between steps 0 <= V < threshold holds.
    """
    current = torch.as_tensor(current, dtype=state.potentials.dtype)
    if current.shape != state.potentials.shape:
        raise ValueError(f"current shape {tuple(current.shape)} does not match "
                         f"state shape {tuple(state.potentials.shape)}")
    if not torch.all(torch.isfinite(current)):
        raise ValueError("non-finite input current")
    beta = params.decay
    active = state.refractory == 0
    v = torch.where(active,
                    beta * state.potentials + (1.0 - beta) * current,
                    state.potentials)
    v = torch.clamp(v, min=0.0)
    spikes = spike_fn(v, params.threshold) * active.to(v.dtype)
    v = v * (1.0 - spikes.detach())
    refractory = torch.where(spikes.detach() > 0,
                             torch.full_like(state.refractory,
                                             params.refractory_steps),
                             torch.clamp(state.refractory - 1, min=0))
    return LIFState(potentials=v, refractory=refractory), spikes


def relaxed_lif_step(v: torch.Tensor, current: torch.Tensor,
                     params: LIFParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Fully differentiable LIF step used by the relaxed forward pass.

    No refractory hold, no potential floor, and a smooth multiplicative
    reset V * (1 - z/threshold) with z the ramp output; the composition is C1
    in every input, which central finite differences require.
    """
    beta = params.decay
    v = beta * v + (1.0 - beta) * current
    z = spike_ramp(v, params.threshold)
    return v * (1.0 - z / params.threshold), z
