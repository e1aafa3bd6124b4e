"""Azimuth labels, peak decoding, and circular error metrics.

Angles live on a 360-bin circle (one bin per degree).  All error arithmetic
is circular: the distance between 359 deg and 0 deg is 1 deg, not 359.  The
literal absolute-difference error would score wraparound estimates as near
misses of 359 degrees; the circular form is used deliberately and this choice
is surfaced in the package docs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_BINS = 360


def circular_error_deg(a, b):
    """min(|a-b|, 360-|a-b|), elementwise."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


@dataclass(frozen=True, eq=False)
class AzimuthLabelCurve:
    """Cyclic Gaussian target over the 360 azimuth bins, peak 1 at the center."""

    values: np.ndarray
    center_deg: float
    sigma_deg: float


def gaussian_label(azimuth_deg: float, sigma_deg: float = 8.0) -> AzimuthLabelCurve:
    """360-bin cyclic Gaussian centered on the azimuth.

    Bin i holds exp(-d^2 / (2 sigma^2)) with d the circular distance between
    i and the center; the curve therefore wraps symmetrically and peaks at 1
    when the center lies on a whole degree.
    """
    if sigma_deg <= 0:
        raise ValueError("sigma must be positive")
    center = float(azimuth_deg) % 360.0
    d = circular_error_deg(np.arange(N_BINS), center)
    return AzimuthLabelCurve(values=np.exp(-d * d / (2.0 * sigma_deg ** 2)),
                             center_deg=center, sigma_deg=float(sigma_deg))


def label_matrix(azimuths_deg, sigma_deg: float = 8.0) -> np.ndarray:
    """Stacked label curves, shape (len(azimuths), 360)."""
    return np.stack([gaussian_label(a, sigma_deg).values for a in azimuths_deg])


def decode_peak(rates) -> int:
    """Azimuth of the strongest output bin.

    Ties are broken by the circular mean of the tied indices, rounded to the
    nearest degree; if the tied bins cancel exactly (e.g. two opposite bins)
    the smallest tied index wins.  All-zero outputs have no peak at all and
    raise; callers that must keep scoring count such samples as 180-degree
    misses.
    """
    r = np.asarray(rates, dtype=float)
    if r.ndim != 1 or r.shape[0] != N_BINS:
        raise ValueError(f"need a length-{N_BINS} rate vector")
    if np.all(r == 0):
        raise ValueError("no activity")
    tied = np.flatnonzero(r == r.max())
    if len(tied) == 1:
        return int(tied[0])
    ang = np.radians(tied.astype(float))
    vec = complex(np.cos(ang).sum(), np.sin(ang).sum())
    if abs(vec) < 1e-9:
        return int(tied[0])
    return int(round(math.degrees(math.atan2(vec.imag, vec.real)))) % N_BINS


def mae(estimates, labels) -> float:
    """Mean circular absolute error in degrees."""
    est = np.asarray(estimates, dtype=float)
    lab = np.asarray(labels, dtype=float)
    if est.shape != lab.shape or est.ndim != 1:
        raise ValueError("estimates and labels must be equally long 1-D")
    if est.size == 0:
        raise ValueError("cannot average zero samples")
    return float(np.mean(circular_error_deg(est, lab)))


@dataclass(eq=False)
class EvalReport:
    """Per-azimuth and overall circular MAE over a scored sample set."""

    azimuths_deg: np.ndarray   # bin centers, ascending
    counts: np.ndarray         # samples per bin
    mae_per_azimuth: np.ndarray
    overall_mae_deg: float
    n_samples: int
    config: dict = field(default_factory=dict)


def build_report(estimates, labels, bin_deg: float = 5.0,
                 config: dict | None = None) -> EvalReport:
    """Group scored samples by their label azimuth on a regular grid.

    The overall MAE is the count-weighted mean of the per-azimuth values,
    which equals the plain mean over all samples because every sample lands
    in exactly one bin.
    """
    est = np.asarray(estimates, dtype=float)
    lab = np.asarray(labels, dtype=float)
    if est.shape != lab.shape or est.size == 0:
        raise ValueError("need equally many estimates and labels, at least one")
    if bin_deg <= 0 or (360.0 / bin_deg) != round(360.0 / bin_deg):
        raise ValueError("bin size must divide 360")
    n_bins = int(round(360.0 / bin_deg))
    centers = np.arange(n_bins) * bin_deg
    idx = np.round((lab % 360.0) / bin_deg).astype(int) % n_bins
    errs = circular_error_deg(est, lab)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=errs, minlength=n_bins)
    with np.errstate(invalid="ignore"):
        per_bin = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return EvalReport(
        azimuths_deg=centers,
        counts=counts,
        mae_per_azimuth=per_bin,
        overall_mae_deg=float(np.mean(errs)),
        n_samples=int(est.size),
        config=dict(config or {}),
    )


def write_report_csv(path: str | Path, report: EvalReport) -> None:
    """Emit `azimuth_deg,n,mae_deg` rows, one per populated bin."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["azimuth_deg", "n", "mae_deg"])
        for az, n, m in zip(report.azimuths_deg, report.counts,
                            report.mae_per_azimuth):
            if n > 0:
                writer.writerow([repr(float(az)), int(n), repr(float(m))])


def write_report_summary(path: str | Path, report: EvalReport) -> None:
    """Flat key=value summary next to the CSV."""
    lines = [f"overall_mae_deg={report.overall_mae_deg!r}",
             f"n_samples={report.n_samples}"]
    for k in sorted(report.config):
        lines.append(f"{k}={report.config[k]}")
    Path(path).write_text("\n".join(lines) + "\n")
