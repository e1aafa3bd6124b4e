"""Command-line pipeline for the localization stack.

Six subcommands cover the artifact flow end to end:

    simulate -> dataset dir (4-channel WAVs + manifest.csv)
    encode   -> one .mtpc coincidence pattern per analysis window
    train    -> best-validation checkpoint + training_log.csv
    eval     -> per-azimuth report.csv + summary.txt
    sweep    -> held-out MAE per delay-line resolution
    baseline -> whitened cross-correlation delays per window and mic pair

Every command accepts --config/--seed/--threads/--out, echoes its full
effective configuration into the output directory, and is deterministic
given config and seed.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from itertools import combinations
from pathlib import Path

import numpy as np
import torch

from .arraysim import (
    ManifestEntry,
    MultiTone,
    NoiseBurst,
    SourceSpec,
    add_noise,
    clip_windows,
    read_manifest,
    read_wav,
    synthesize_clip,
    write_manifest,
    write_wav,
)
from .baseline import gcc_phat
from .config import (
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    DataError,
    NumericalError,
    RunConfig,
    UsageError,
    make_run_config,
    parse_number_list,
    write_config_snapshot,
)
from .encoder import EncoderConfig, encode_multipair
from .experiments import (
    EncodedDataset,
    desk_geometry,
    duration_for_windows,
    rsnn_input,
    run_encoder_sweep,
    train_rsnn,
    write_sweep_csv,
)
from .metrics import build_report, decode_peak, write_report_csv, \
    write_report_summary
from .patternio import read_pattern, save_multipair
from .snn import load_net


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through the usage exit code."""

    def error(self, message):
        raise UsageError(message)


def _out_dir(config: RunConfig, default: str) -> Path:
    out = Path(str(config["out"]) or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory: {exc}") from None
    return out


def _encoder_config(config: RunConfig) -> EncoderConfig:
    try:
        return EncoderConfig(fft_points=config["fft_points"],
                             delay_lines=config["delay_lines"],
                             channels=config["channels"],
                             floor_db=config["floor_db"],
                             f_low_hz=config["f_low_hz"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _azimuth_grid(config: RunConfig) -> np.ndarray:
    step = float(config["azimuth_step_deg"])
    if step <= 0 or round(360.0 / step) != 360.0 / step:
        raise UsageError(f"azimuth_step_deg={step} does not divide 360")
    return np.arange(0.0, 360.0, step)


def _finish(out: Path, config: RunConfig) -> None:
    write_config_snapshot(out / "config.txt", config)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(config: RunConfig) -> None:
    """Write one labeled multichannel WAV per grid point, plus a manifest."""
    azimuths = _azimuth_grid(config)
    distances = parse_number_list(config["distances_m"], float, "distances_m")
    if any(d <= 0 for d in distances):
        raise UsageError("distances_m must be positive")
    sources = tuple(s.strip() for s in str(config["sources"]).split(",")
                    if s.strip())
    if not sources or any(s not in ("tones", "burst") for s in sources):
        raise UsageError("sources must list tones and/or burst")
    noise = str(config["noise"])
    if noise not in ("white", "none"):
        raise UsageError("noise must be white or none")
    test_fraction = float(config["test_fraction"])
    if not 0.0 <= test_fraction < 1.0:
        raise UsageError("test_fraction must lie in [0, 1)")
    n_clips = int(config["n_clips"])
    if n_clips < 1 or int(config["windows_per_clip"]) < 1:
        raise UsageError("n_clips and windows_per_clip must be positive")

    fs = float(config["sample_rate"])
    tones = parse_number_list(config["tones_hz"], float, "tones_hz")
    geometry = desk_geometry(float(config["array_side_m"]))
    duration = duration_for_windows(int(config["windows_per_clip"]),
                                    float(config["window_s"]),
                                    float(config["stride_s"]), fs)
    test_every = round(1.0 / test_fraction) if test_fraction > 0 else 0

    out = _out_dir(config, "dataset")
    rng = np.random.default_rng(int(config["seed"]))
    entries: list[ManifestEntry] = []
    for az in azimuths:
        for dist in distances:
            for kind in sources:
                for i in range(n_clips):
                    if kind == "tones":
                        signal = MultiTone.equal_amplitude(
                            tones, rng.uniform(0.0, 2.0 * np.pi,
                                               size=len(tones)))
                    else:
                        signal = NoiseBurst()
                    src = SourceSpec(float(az), float(dist), signal,
                                     seed=int(rng.integers(2**31)))
                    clip = synthesize_clip(geometry, src, duration, fs)
                    if noise == "white":
                        clip = add_noise(clip, float(config["snr_db"]),
                                         seed=int(rng.integers(2**31)))
                    rel = f"az{az:05.1f}/d{dist:.2f}/{kind}{i}.wav"
                    path = out / rel
                    path.parent.mkdir(parents=True, exist_ok=True)
                    write_wav(path, clip)
                    k = len(entries)
                    split = ("test" if test_every
                             and k % test_every == test_every - 1 else "train")
                    entries.append(ManifestEntry(rel, float(az), float(dist),
                                                 float(config["snr_db"]),
                                                 noise, split))
    write_manifest(out / "manifest.csv", entries)
    _finish(out, config)
    print(f"wrote {len(entries)} clips under {out} "
          f"({len(azimuths)} azimuths x {len(distances)} distances)")


# ---------------------------------------------------------------------------
# encode


def cmd_encode(config: RunConfig) -> None:
    """Encode every manifest clip window-by-window into pattern files.

    Per-file failures (unreadable or corrupt WAVs) are recorded in
    errors.csv and the run continues; an empty manifest is a valid no-op.
    """
    dataset = Path(str(config["dataset_dir"]))
    manifest = dataset / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"no manifest at {manifest}")
    try:
        entries = read_manifest(manifest)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    enc = _encoder_config(config)
    out = _out_dir(config, "patterns")
    window_s = float(config["window_s"])
    stride_s = float(config["stride_s"])

    n_files = 0
    errors: list[tuple[str, str]] = []
    for entry in entries:
        try:
            clip = read_wav(dataset / entry.path,
                            label_azimuth=entry.azimuth_deg)
            stem = Path(entry.path).with_suffix("").as_posix().replace("/", "_")
            split_dir = out / entry.split
            split_dir.mkdir(parents=True, exist_ok=True)
            for w, window in enumerate(clip_windows(clip, window_s, stride_s)):
                pattern = encode_multipair(window, enc)
                save_multipair(split_dir / f"{stem}_w{w:03d}.mtpc", pattern)
                n_files += 1
        except (OSError, ValueError) as exc:
            errors.append((entry.path, str(exc)))
    with open(out / "errors.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "error"])
        writer.writerows(errors)
    _finish(out, config)
    print(f"encoded {n_files} windows from {len(entries)} clips "
          f"({len(errors)} file errors)")


# ---------------------------------------------------------------------------
# train


def _load_split(config: RunConfig, split: str) -> EncodedDataset:
    """Read every pattern file of one split into a stacked dataset."""
    split_dir = Path(str(config["patterns_dir"])) / split
    files = sorted(split_dir.glob("*.mtpc"))
    if not files:
        raise DataError(f"no pattern files under {split_dir}")
    counts, azimuths = [], []
    for path in files:
        try:
            rec = read_pattern(path)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from None
        if rec.label_azimuth is None:
            raise DataError(f"{path}: pattern carries no azimuth label")
        counts.append(rec.counts)
        azimuths.append(rec.label_azimuth)
    shapes = {c.shape for c in counts}
    if len(shapes) != 1:
        raise DataError(f"{split_dir}: mixed pattern shapes {sorted(shapes)}")
    shape = counts[0].shape
    try:
        enc = EncoderConfig(fft_points=config["fft_points"],
                            delay_lines=shape[2], channels=shape[1],
                            floor_db=config["floor_db"],
                            f_low_hz=config["f_low_hz"])
    except ValueError as exc:
        raise DataError(f"{split_dir}: {exc}") from None
    return EncodedDataset(np.stack(counts), np.asarray(azimuths, dtype=float),
                          enc)


def cmd_train(config: RunConfig) -> None:
    """Fit the recurrent backend; keep the best-validation checkpoint."""
    if int(config["n_hidden"]) < 4:
        raise UsageError("n_hidden must be at least 4")
    if int(config["epochs"]) < 1 or int(config["batch_size"]) < 1:
        raise UsageError("epochs and batch_size must be positive")
    train = _load_split(config, "train")
    test = _load_split(config, "test")
    out = _out_dir(config, "run")
    torch.set_num_threads(int(config["threads"]))
    target = float(config["target_mae_deg"]) or None
    try:
        run = train_rsnn(train, test,
                         n_hidden=int(config["n_hidden"]),
                         seed=int(config["seed"]),
                         epochs=int(config["epochs"]),
                         batch_size=int(config["batch_size"]),
                         lr=float(config["lr"]),
                         target_mae_deg=target,
                         log_path=out / "training_log.csv",
                         checkpoint_path=out / "checkpoint.mtpw")
    except ValueError as exc:
        if "non-finite" in str(exc):
            raise NumericalError(f"training diverged: {exc}") from None
        raise DataError(str(exc)) from None
    _finish(out, config)
    print(f"best held-out MAE {run.best_mae_deg:.3f} deg "
          f"({len(train)} train / {len(test)} validation windows); "
          f"checkpoint + log under {out}")


# ---------------------------------------------------------------------------
# eval


def cmd_eval(config: RunConfig) -> None:
    """Score a checkpoint on the held-out patterns and write the report."""
    ckpt = Path(str(config["checkpoint"]) or "run/checkpoint.mtpw")
    if not ckpt.exists():
        raise DataError(f"missing checkpoint {ckpt}")
    try:
        net = load_net(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{ckpt}: {exc}") from None
    test = _load_split(config, "test")
    out = _out_dir(config, "eval")
    torch.set_num_threads(int(config["threads"]))

    x = rsnn_input(test.counts)
    estimates = np.empty(len(test))
    with torch.no_grad():
        for lo in range(0, x.shape[0], 256):
            rates, _ = net(x[lo:lo + 256])
            for i, row in enumerate(rates.cpu().numpy()):
                try:
                    estimates[lo + i] = decode_peak(row)
                except ValueError:
                    # silent output: score as a maximal miss
                    estimates[lo + i] = (test.azimuths[lo + i] + 180.0) % 360.0
    try:
        report = build_report(estimates, test.azimuths,
                              bin_deg=float(config["azimuth_step_deg"]),
                              config=config.as_dict())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_report_csv(out / "report.csv", report)
    write_report_summary(out / "summary.txt", report)
    _finish(out, config)
    print(f"overall MAE {report.overall_mae_deg:.3f} deg over "
          f"{report.n_samples} windows; report under {out}")


# ---------------------------------------------------------------------------
# sweep


def _clips_by_split(config: RunConfig):
    """Load the manifest's WAVs back into labeled train/test clip lists."""
    dataset = Path(str(config["dataset_dir"]))
    manifest = dataset / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"no manifest at {manifest}")
    try:
        entries = read_manifest(manifest)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    splits = {"train": [], "test": []}
    for entry in entries:
        if entry.split not in splits:
            raise DataError(f"{manifest}: unknown split {entry.split!r}")
        try:
            splits[entry.split].append(
                read_wav(dataset / entry.path, label_azimuth=entry.azimuth_deg))
        except (OSError, ValueError) as exc:
            raise DataError(f"{entry.path}: {exc}") from None
    return splits["train"], splits["test"]


def cmd_sweep(config: RunConfig) -> None:
    """Re-encode the dataset at several delay-line resolutions and train each."""
    delay_lines = parse_number_list(config["sweep_delay_lines"], int,
                                    "sweep_delay_lines")
    seeds = parse_number_list(config["sweep_seeds"], int, "sweep_seeds")
    configs = []
    for d in delay_lines:
        try:
            configs.append(EncoderConfig(fft_points=config["fft_points"],
                                         delay_lines=d,
                                         channels=config["channels"],
                                         floor_db=config["floor_db"],
                                         f_low_hz=config["f_low_hz"]))
        except ValueError as exc:
            raise UsageError(f"sweep_delay_lines={d}: {exc}") from None
    train_clips, test_clips = _clips_by_split(config)
    if not train_clips or not test_clips:
        raise DataError("sweep needs clips in both the train and test splits")
    out = _out_dir(config, "sweep")
    torch.set_num_threads(int(config["threads"]))
    rows = run_encoder_sweep(
        train_clips, test_clips, configs, seeds,
        n_hidden=int(config["n_hidden"]), epochs=int(config["epochs"]),
        batch_size=int(config["batch_size"]), lr=float(config["lr"]),
        progress=lambda r: print(f"delay_lines={r.delay_lines} "
                                 f"seed={r.seed} mae={r.mae_deg:.3f}"))
    write_sweep_csv(out / "sweep.csv", rows)
    _finish(out, config)
    print(f"swept {len(delay_lines)} resolutions x {len(seeds)} seeds; "
          f"results under {out}")


# ---------------------------------------------------------------------------
# baseline


def cmd_baseline(config: RunConfig) -> None:
    """Whitened cross-correlation delay per window and mic pair, as CSV."""
    dataset = Path(str(config["dataset_dir"]))
    manifest = dataset / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"no manifest at {manifest}")
    try:
        entries = read_manifest(manifest)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    out = _out_dir(config, "baseline")
    window_s = float(config["window_s"])
    stride_s = float(config["stride_s"])
    half = int(config["delay_lines"]) // 2
    if half < 1:
        raise UsageError("delay_lines must be at least 3 for the baseline")

    n_rows = 0
    with open(out / "baseline.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "window", "mic_i", "mic_j", "azimuth_deg",
                         "delay_s"])
        for entry in entries:
            try:
                clip = read_wav(dataset / entry.path,
                                label_azimuth=entry.azimuth_deg)
                for w, window in enumerate(clip_windows(clip, window_s,
                                                        stride_s)):
                    fs = window.sample_rate
                    for i, j in combinations(range(window.n_channels), 2):
                        est = gcc_phat(window.samples[i], window.samples[j],
                                       fs, max_lag_s=half / fs)
                        writer.writerow([entry.path, w, i, j,
                                         repr(entry.azimuth_deg),
                                         repr(float(est.delay))])
                        n_rows += 1
            except (OSError, ValueError) as exc:
                raise DataError(f"{entry.path}: {exc}") from None
    _finish(out, config)
    print(f"wrote {n_rows} delay estimates under {out}")


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "simulate": cmd_simulate,
    "encode": cmd_encode,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="spikeloc",
                     description="Spike-based sound-source localization "
                                 "pipeline.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")
    helps = {
        "simulate": "synthesize a labeled WAV dataset with a manifest",
        "encode": "turn manifest clips into per-window pattern files",
        "train": "fit the recurrent backend on encoded patterns",
        "eval": "score a checkpoint and write per-azimuth reports",
        "sweep": "compare delay-line resolutions end to end",
        "baseline": "classical cross-correlation delays per window",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", metavar="PATH",
                       help="flat key=value settings file")
        p.add_argument("--seed", type=int, metavar="N",
                       help="global random seed")
        p.add_argument("--threads", type=int, metavar="N",
                       help="worker cap for numeric backends")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (default depends on command)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = make_run_config(args.config, {"seed": args.seed,
                                               "threads": args.threads,
                                               "out": args.out})
        _COMMANDS[args.command](config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
