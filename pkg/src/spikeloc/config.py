"""Run configuration shared by every command-line entry point.

Settings live in one flat key=value namespace.  A run's effective
configuration is built by layering three sources, later ones winning:

    built-in defaults  <-  config file (--config)  <-  command-line flags

Unknown keys are rejected at parse time, and every command writes the full
merged mapping next to its outputs so any artifact can be reproduced from
the snapshot sitting beside it.
"""

from __future__ import annotations

from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    """Bad flags, malformed config, or an invalid parameter grid."""


class DataError(Exception):
    """Missing or unreadable artifacts: manifests, WAVs, patterns, checkpoints."""


class NumericalError(Exception):
    """Computation produced non-finite values and cannot continue."""


# One entry per setting; the default's Python type decides how file and flag
# values are coerced.  List-valued settings stay comma-separated strings so
# the file format keeps to plain key=value lines.
DEFAULTS: dict[str, object] = {
    # run plumbing
    "seed": 0,
    "threads": 1,
    "out": "",                  # output directory; empty -> per-command default
    "dataset_dir": "dataset",   # where simulate wrote WAVs + manifest
    "patterns_dir": "patterns", # where encode wrote .mtpc files
    "checkpoint": "",           # trained weights; empty -> run/checkpoint.mtpw
    # simulated capture
    "sample_rate": 16000.0,
    "array_side_m": 0.25,
    "tones_hz": "250,500,750,1000",
    "azimuth_step_deg": 5.0,
    "distances_m": "1.0,1.5",
    "sources": "tones",         # comma list drawn from: tones, burst
    "n_clips": 1,               # clips per (azimuth, distance, source kind)
    "windows_per_clip": 4,
    "snr_db": 20.0,
    "noise": "white",           # white | none
    "test_fraction": 0.25,
    # windowing + encoder
    "window_s": 0.170,
    "stride_s": 0.085,
    "fft_points": 1024,
    "delay_lines": 51,
    "channels": 40,
    "floor_db": 40.0,
    "f_low_hz": 50.0,
    # training
    "n_hidden": 128,
    "epochs": 10,
    "batch_size": 128,
    "lr": 0.001,
    "sigma_deg": 8.0,
    "target_mae_deg": 0.0,      # 0 disables the early-stop target
    # encoder-resolution sweep
    "sweep_delay_lines": "11,31,51",
    "sweep_seeds": "0",
}


def _coerce(key: str, raw: str):
    """Parse a raw string into the type of the key's default value."""
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as "
                         f"{type(default).__name__}") from None
    return raw


class RunConfig:
    """Immutable view of the merged settings for one command invocation."""

    def __init__(self, values: dict[str, object]):
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        self._values = dict(DEFAULTS)
        self._values.update(values)

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise KeyError(key)
        return self._values[key]

    def as_dict(self) -> dict[str, object]:
        return dict(self._values)


def parse_config_file(path: str | Path) -> dict[str, object]:
    """Read flat key=value lines; blanks and # comments are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, "
                             f"got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, val.strip())
    return values


def make_run_config(config_path: str | Path | None = None,
                    overrides: dict[str, object] | None = None) -> RunConfig:
    """Layer defaults, then the config file, then explicit flag overrides."""
    values: dict[str, object] = {}
    if config_path is not None:
        values.update(parse_config_file(config_path))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    config = RunConfig(values)
    if config["threads"] < 1:
        raise UsageError("threads must be at least 1")
    return config


def write_config_snapshot(path: str | Path, config: RunConfig) -> None:
    """Echo the full effective configuration, one key=value per line."""
    values = config.as_dict()
    lines = [f"{k}={values[k]}" for k in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_number_list(text: str, kind, setting: str) -> tuple:
    """Split a comma-separated setting into numbers of the given kind."""
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    if not items:
        raise UsageError(f"{setting} must list at least one value")
    try:
        return tuple(kind(s) for s in items)
    except ValueError:
        raise UsageError(f"{setting}: cannot parse {text!r} as "
                         f"{kind.__name__} list") from None
