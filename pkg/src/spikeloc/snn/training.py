"""Loss, BPTT parameter updates, and the epoch-level training loop.

The loss compares step-normalized output rates (spike count / simulated
steps, so every entry lies in [0, 1]) against a cyclic Gaussian label curve
with a plain mean-squared error over the output bins.  Gradients flow through
every time step; the spike nonlinearity contributes its triangular
pseudo-derivative on the backward pass.  Updates use adaptive per-parameter
moment estimation (Adam) with a configurable rate.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..metrics import AzimuthLabelCurve, circular_error_deg, decode_peak, \
    label_matrix


def mse_loss(output, label) -> torch.Tensor:
    """Mean squared error over output bins: (1/n) * sum((label - output)^2).

    Accepts vectors or (batch, n) stacks; batches average over everything,
    which equals the mean of per-sample losses.
    """
    out = output if torch.is_tensor(output) else torch.as_tensor(
        np.asarray(output, dtype=float))
    if isinstance(label, AzimuthLabelCurve):
        label = label.values
    lab = label if torch.is_tensor(label) else torch.as_tensor(
        np.asarray(label, dtype=float))
    lab = lab.to(out.dtype)
    if out.shape != lab.shape:
        raise ValueError(f"output shape {tuple(out.shape)} does not match "
                         f"label shape {tuple(lab.shape)}")
    return torch.mean((lab - out) ** 2)


def make_optimizer(net: torch.nn.Module, lr: float = 1e-3,
                   parameters=None) -> torch.optim.Optimizer:
    """Adam over the net's parameters, or over an explicit subset."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    params = net.parameters() if parameters is None else list(parameters)
    return torch.optim.Adam(params, lr=lr)


def bptt_update(net: torch.nn.Module, batch, optimizer: torch.optim.Optimizer,
                sigma_deg: float = 8.0) -> float:
    """One gradient step on a batch; returns the batch mean loss.

    The batch is either a prepared (inputs, label_curves) tensor pair or a
    list of (MultiPairPattern, AzimuthLabelCurve) tuples, which are stacked
    through net.prepare_input.  A non-finite loss raises before any parameter
    is touched.
    """
    if isinstance(batch, (list, tuple)) and len(batch) == 2 \
            and torch.is_tensor(batch[0]):
        x, labels = batch
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        patterns = [b[0] for b in batch]
        curves = [b[1] for b in batch]
        x = net.prepare_input(patterns)
        labels = torch.as_tensor(np.stack(
            [c.values if isinstance(c, AzimuthLabelCurve) else np.asarray(c)
             for c in curves]))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    rates, _ = net(x)
    normalized = rates / net.simulation_steps(x)
    loss = mse_loss(normalized, labels)
    if not torch.isfinite(loss):
        raise ValueError("non-finite training loss; parameters left unchanged")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


@dataclass(frozen=True)
class TrainLogRow:
    epoch: int
    split: str
    loss: float
    mae_deg: float
    seconds: float


def write_training_log(path: str | Path, rows: list[TrainLogRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "mae_deg", "seconds"])
        for r in rows:
            writer.writerow([r.epoch, r.split, repr(r.loss), repr(r.mae_deg),
                             repr(r.seconds)])


def score_rates(rates: np.ndarray, azimuths: np.ndarray) -> np.ndarray:
    """Circular error per sample; silent outputs count as 180-degree misses."""
    errs = np.empty(rates.shape[0])
    for i in range(rates.shape[0]):
        try:
            est = decode_peak(rates[i])
        except ValueError:
            errs[i] = 180.0
            continue
        errs[i] = circular_error_deg(est, azimuths[i])
    return errs


def evaluate_net(net: torch.nn.Module, x: torch.Tensor,
                 azimuths: np.ndarray, batch_size: int = 256,
                 sigma_deg: float = 8.0, label_gain: float = 1.0,
                 label_offset: float = 0.0) -> tuple[float, float, np.ndarray]:
    """Returns (mean loss, MAE degrees, per-sample estimates as errors array)."""
    labels = torch.as_tensor(label_gain * label_matrix(azimuths, sigma_deg)
                             + label_offset)
    losses = []
    errs = []
    with torch.no_grad():
        for lo in range(0, x.shape[0], batch_size):
            xb = x[lo:lo + batch_size]
            rates, _ = net(xb)
            normalized = rates / net.simulation_steps(xb)
            losses.append(float(mse_loss(normalized,
                                         labels[lo:lo + batch_size])))
            errs.append(score_rates(rates.cpu().numpy(),
                                    azimuths[lo:lo + batch_size]))
    errors = np.concatenate(errs)
    return float(np.mean(losses)), float(np.mean(errors)), errors


def train_model(net: torch.nn.Module, train_x: torch.Tensor,
                train_azimuths: np.ndarray, eval_x: torch.Tensor,
                eval_azimuths: np.ndarray, *, epochs: int = 50,
                batch_size: int = 128, lr: float = 1e-3, seed: int = 0,
                sigma_deg: float = 8.0, target_mae_deg: float | None = None,
                label_gain: float = 1.0, label_offset: float = 0.0,
                parameters=None, log_path: str | Path | None = None,
                checkpoint_path: str | Path | None = None) -> list[TrainLogRow]:
    """Epoch loop: shuffled minibatches, per-epoch held-out scoring.

    Stops early once the held-out MAE reaches target_mae_deg (if given).
    When checkpoint_path is set, the parameters of the best held-out epoch
    are saved there.  label_gain/label_offset rescale the Gaussian targets
    to the readout's operating range; parameters restricts the update to a
    subset (e.g. the readout weights).  Returns the training log rows.
    """
    from .checkpoint import save_net  # local import to avoid cycles
    if epochs < 1:
        raise ValueError("need at least one epoch")
    if train_x.shape[0] == 0:
        raise ValueError("empty training set")
    optimizer = make_optimizer(net, lr, parameters)
    labels = torch.as_tensor(
        label_gain * label_matrix(train_azimuths, sigma_deg)
        + label_offset).to(next(net.parameters()).dtype)
    rng = np.random.default_rng(seed)
    rows: list[TrainLogRow] = []
    best_mae = float("inf")
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(train_x.shape[0])
        epoch_losses = []
        for lo in range(0, len(order), batch_size):
            sel = order[lo:lo + batch_size]
            loss = bptt_update(net, (train_x[sel], labels[sel]), optimizer)
            epoch_losses.append(loss)
        train_seconds = time.perf_counter() - t0
        rows.append(TrainLogRow(epoch, "train", float(np.mean(epoch_losses)),
                                float("nan"), train_seconds))
        t1 = time.perf_counter()
        val_loss, val_mae, _ = evaluate_net(net, eval_x, eval_azimuths,
                                            sigma_deg=sigma_deg,
                                            label_gain=label_gain,
                                            label_offset=label_offset)
        rows.append(TrainLogRow(epoch, "eval", val_loss, val_mae,
                                time.perf_counter() - t1))
        if val_mae < best_mae:
            best_mae = val_mae
            if checkpoint_path is not None:
                save_net(checkpoint_path, net)
        if target_mae_deg is not None and val_mae <= target_mae_deg:
            break
    if log_path is not None:
        write_training_log(log_path, rows)
    return rows


def best_eval_mae(rows: list[TrainLogRow]) -> float:
    vals = [r.mae_deg for r in rows if r.split == "eval"]
    if not vals:
        raise ValueError("no evaluation rows in the log")
    return float(np.nanmin(vals))
