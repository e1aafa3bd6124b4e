"""Binary file format for encoded spike patterns.

Layout, all little-endian:

    magic   4 bytes  b"MTPC"
    version u16      currently 1
    n_pairs u16
    n_chan  u16
    n_delay u16
    f_s     f64
    counts  n_pairs * n_chan * n_delay x u16, row-major (pair, channel, delay)
    label   f32 azimuth in degrees, optional (present iff 4 bytes remain)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MTPC"
VERSION = 1
_HEADER = struct.Struct("<4sHHHHd")


@dataclass(eq=False)
class PatternRecord:
    """A pattern file's payload: counts (n_pairs, n_channels, n_delays)."""

    counts: np.ndarray
    sample_rate: float
    label_azimuth: float | None = None


def write_pattern(path: str | Path, counts: np.ndarray, sample_rate: float,
                  label_azimuth: float | None = None) -> None:
    """Serialize one window's stacked coincidence counts."""
    counts = np.asarray(counts)
    if counts.ndim != 3:
        raise ValueError("counts must be (n_pairs, n_channels, n_delays)")
    if np.any(counts < 0) or np.any(counts > 0xFFFF):
        raise ValueError("counts out of uint16 range")
    n_pairs, n_chan, n_delay = counts.shape
    if max(counts.shape) > 0xFFFF:
        raise ValueError("dimension exceeds uint16 header field")
    blob = _HEADER.pack(MAGIC, VERSION, n_pairs, n_chan, n_delay,
                        float(sample_rate))
    blob += counts.astype("<u2").tobytes(order="C")
    if label_azimuth is not None:
        blob += struct.pack("<f", float(label_azimuth))
    Path(path).write_bytes(blob)


def save_multipair(path: str | Path, pattern) -> None:
    """Convenience wrapper for a MultiPairPattern."""
    write_pattern(path, pattern.stacked(), pattern.sample_rate,
                  pattern.label_azimuth)


def read_pattern(path: str | Path) -> PatternRecord:
    """Parse a pattern file; raises ValueError on any structural defect."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n_pairs, n_chan, n_delay, fs = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = n_pairs * n_chan * n_delay * 2
    remainder = len(blob) - _HEADER.size - body
    if remainder not in (0, 4):
        raise ValueError(f"{path}: size mismatch ({remainder} stray bytes)")
    counts = np.frombuffer(blob, dtype="<u2", count=n_pairs * n_chan * n_delay,
                           offset=_HEADER.size).reshape(n_pairs, n_chan, n_delay)
    label = None
    if remainder == 4:
        (label,) = struct.unpack_from("<f", blob, _HEADER.size + body)
    return PatternRecord(counts=counts.copy(), sample_rate=fs,
                         label_azimuth=label)
