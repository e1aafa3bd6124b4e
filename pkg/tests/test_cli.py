"""Command-line pipeline: artifact flow, determinism, and exit codes.

A tiny four-azimuth dataset is simulated once per module and threaded through
encode/train/eval/sweep/baseline in-process via main(), checking each
command's outputs and the 0/1/2/3 exit-code contract.
"""

import csv
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from spikeloc.arraysim import clip_windows, read_manifest, read_wav, \
    write_manifest
from spikeloc.baseline import gcc_phat
from spikeloc.cli import main
from spikeloc.config import (
    DEFAULTS,
    RunConfig,
    UsageError,
    make_run_config,
    parse_config_file,
)
from spikeloc.patternio import read_pattern

SMOKE_CFG = """
azimuth_step_deg=90
windows_per_clip=2
epochs=1
n_hidden=8
batch_size=16
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Dataset + patterns shared by the pipeline tests (simulate + encode)."""
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.txt").write_text(SMOKE_CFG)
    import os
    old = os.getcwd()
    os.chdir(root)
    try:
        assert main(["simulate", "--config", "cfg.txt", "--seed", "5"]) == 0
        assert main(["encode", "--config", "cfg.txt"]) == 0
    finally:
        os.chdir(old)
    return root


def run_in(monkeypatch, root, args):
    monkeypatch.chdir(root)
    return main(args)


# --- configuration layering ---


def test_config_defaults_file_flags_precedence(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("seed=3\nepochs=7\n# comment\n\nlr=0.5\n")
    cfg = make_run_config(p, {"seed": 9, "out": None})
    assert cfg["seed"] == 9          # flag beats file
    assert cfg["epochs"] == 7        # file beats default
    assert cfg["lr"] == 0.5
    assert cfg["threads"] == DEFAULTS["threads"]


def test_config_rejects_unknown_and_malformed(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("no_such_setting=1\n")
    with pytest.raises(UsageError):
        parse_config_file(bad)
    bad.write_text("just words\n")
    with pytest.raises(UsageError):
        parse_config_file(bad)
    bad.write_text("epochs=many\n")
    with pytest.raises(UsageError):
        parse_config_file(bad)
    with pytest.raises(UsageError):
        RunConfig({"frobnicate": 1})


def test_config_snapshot_written_beside_outputs(workdir):
    text = (workdir / "dataset" / "config.txt").read_text()
    keys = {line.split("=")[0] for line in text.splitlines()}
    assert keys == set(DEFAULTS)
    assert "seed=5" in text.splitlines()


# --- simulate ---


def test_simulate_grid_and_manifest(workdir):
    entries = read_manifest(workdir / "dataset" / "manifest.csv")
    # 4 azimuths x 2 distances x 1 tones clip
    assert len(entries) == 8
    assert sorted({e.azimuth_deg for e in entries}) == [0.0, 90.0, 180.0,
                                                        270.0]
    assert sorted({e.distance_m for e in entries}) == [1.0, 1.5]
    assert {e.split for e in entries} == {"train", "test"}
    clip = read_wav(workdir / "dataset" / entries[0].path)
    assert clip.n_channels == 4
    assert clip.sample_rate == 16000.0


def test_simulate_same_seed_byte_identical(tmp_path, monkeypatch):
    (tmp_path / "cfg.txt").write_text(SMOKE_CFG)
    for out in ("a", "b"):
        assert run_in(monkeypatch, tmp_path,
                      ["simulate", "--config", "cfg.txt", "--seed", "11",
                       "--out", out]) == 0
    a, b = (tmp_path / "a"), (tmp_path / "b")
    assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()
    wavs = sorted(p.relative_to(a) for p in a.rglob("*.wav"))
    assert wavs
    for rel in wavs:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_simulate_rejects_bad_grid(tmp_path, monkeypatch):
    (tmp_path / "g.txt").write_text("azimuth_step_deg=7\n")
    assert run_in(monkeypatch, tmp_path,
                  ["simulate", "--config", "g.txt"]) == 1


# --- encode ---


def test_encode_one_file_per_window(workdir):
    entries = read_manifest(workdir / "dataset" / "manifest.csv")
    train = sorted((workdir / "patterns" / "train").glob("*.mtpc"))
    test = sorted((workdir / "patterns" / "test").glob("*.mtpc"))
    assert len(train) + len(test) == 2 * len(entries)  # windows_per_clip=2
    rec = read_pattern(train[0])
    assert rec.counts.shape == (6, 40, 51)
    assert rec.label_azimuth is not None


def test_encoded_patterns_recover_geometry(tmp_path, monkeypatch):
    """Content check through the whole simulate->encode plumbing: the taps
    that win each pair's count vote must equal the geometric arrival-time
    differences -- exactly on clean clips, within one tap at 20 dB SNR with
    the amplitude floor opened to 20 dB."""
    from spikeloc.arraysim import MultiTone, SourceSpec, analytic_tdoa
    from spikeloc.experiments import desk_geometry, pairwise_argmax

    cases = [("clean", "noise=none\n", 0),
             ("noisy", "noise=white\nsnr_db=20\nfloor_db=20\n", 1)]
    g = desk_geometry()
    for name, extra, tolerance in cases:
        root = tmp_path / name
        root.mkdir()
        (root / "cfg.txt").write_text(
            "azimuth_step_deg=90\nwindows_per_clip=1\n" + extra)
        assert run_in(monkeypatch, root,
                      ["simulate", "--config", "cfg.txt", "--seed", "3"]) == 0
        assert run_in(monkeypatch, root,
                      ["encode", "--config", "cfg.txt"]) == 0
        checked = 0
        for entry in read_manifest(root / "dataset" / "manifest.csv"):
            stem = Path(entry.path).with_suffix("").as_posix().replace("/", "_")
            rec = read_pattern(root / "patterns" / entry.split /
                               f"{stem}_w000.mtpc")
            got = pairwise_argmax(rec.counts)
            src = SourceSpec(entry.azimuth_deg, entry.distance_m,
                             MultiTone.equal_amplitude((250.0,)))
            want = np.array([round(analytic_tdoa(g, src, pair) * 16000.0)
                             for pair in g.pairs()])
            assert np.all(np.abs(got - want) <= tolerance), \
                (name, entry.path, got, want)
            checked += 1
        assert checked == 8  # 4 azimuths x 2 distances


def test_encode_corrupt_wav_recorded_and_run_continues(tmp_path, monkeypatch):
    (tmp_path / "cfg.txt").write_text(SMOKE_CFG)
    assert run_in(monkeypatch, tmp_path,
                  ["simulate", "--config", "cfg.txt"]) == 0
    victim = read_manifest(tmp_path / "dataset" / "manifest.csv")[0].path
    (tmp_path / "dataset" / victim).write_bytes(b"not audio")
    assert run_in(monkeypatch, tmp_path,
                  ["encode", "--config", "cfg.txt"]) == 0
    with open(tmp_path / "patterns" / "errors.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path", "error"]
    assert len(rows) == 2 and rows[1][0] == victim
    # the other clips still produced patterns
    made = list((tmp_path / "patterns").rglob("*.mtpc"))
    assert len(made) == 2 * 7


def test_encode_empty_manifest_is_a_valid_noop(tmp_path, monkeypatch):
    (tmp_path / "dataset").mkdir()
    write_manifest(tmp_path / "dataset" / "manifest.csv", [])
    assert run_in(monkeypatch, tmp_path, ["encode"]) == 0
    assert not list((tmp_path / "patterns").rglob("*.mtpc"))


# --- train / eval ---


def test_train_writes_checkpoint_and_log(workdir, monkeypatch):
    assert run_in(monkeypatch, workdir,
                  ["train", "--config", "cfg.txt", "--seed", "2"]) == 0
    assert (workdir / "run" / "checkpoint.mtpw").exists()
    with open(workdir / "run" / "training_log.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "split", "loss", "mae_deg", "seconds"]
    assert {r[1] for r in rows[1:]} == {"train", "eval"}


def test_train_same_seed_reproducible(workdir, monkeypatch):
    for out in ("runA", "runB"):
        assert run_in(monkeypatch, workdir,
                      ["train", "--config", "cfg.txt", "--seed", "2",
                       "--out", out]) == 0
    a = (workdir / "runA" / "checkpoint.mtpw").read_bytes()
    b = (workdir / "runB" / "checkpoint.mtpw").read_bytes()
    assert a == b


def test_train_divergence_exits_numerical(workdir, monkeypatch):
    def explode(*args, **kwargs):
        raise ValueError("non-finite training loss; parameters left unchanged")
    monkeypatch.setattr("spikeloc.cli.train_rsnn", explode)
    assert run_in(monkeypatch, workdir,
                  ["train", "--config", "cfg.txt", "--out", "runX"]) == 3


def test_eval_writes_report(workdir, monkeypatch):
    assert run_in(monkeypatch, workdir, ["eval", "--config", "cfg.txt"]) == 0
    summary = (workdir / "eval" / "summary.txt").read_text()
    assert summary.startswith("overall_mae_deg=")
    with open(workdir / "eval" / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["azimuth_deg", "n", "mae_deg"]
    assert len(rows) > 1


def test_eval_missing_checkpoint_is_data_error(tmp_path, monkeypatch):
    assert run_in(monkeypatch, tmp_path, ["eval"]) == 2


def test_eval_perfect_posterior_scores_zero(workdir, monkeypatch):
    """A readout that always peaks at the true bin must report MAE 0."""
    labels = [read_pattern(p).label_azimuth
              for p in sorted((workdir / "patterns" / "test").glob("*.mtpc"))]

    class Oracle:
        def __init__(self):
            self.i = 0

        def __call__(self, xb):
            import torch
            rates = torch.zeros(xb.shape[0], 360)
            for r in range(xb.shape[0]):
                rates[r, int(round(labels[self.i])) % 360] = 1.0
                self.i += 1
            return rates, None

    monkeypatch.setattr("spikeloc.cli.load_net", lambda path: Oracle())
    assert run_in(monkeypatch, workdir,
                  ["eval", "--config", "cfg.txt", "--out", "eval0"]) == 0
    text = (workdir / "eval0" / "summary.txt").read_text()
    assert text.splitlines()[0] == "overall_mae_deg=0.0"


# --- sweep / baseline ---


def test_sweep_one_row_per_resolution(workdir, monkeypatch):
    (workdir / "sweep.txt").write_text(
        SMOKE_CFG + "sweep_delay_lines=11,31\nsweep_seeds=4\n")
    assert run_in(monkeypatch, workdir,
                  ["sweep", "--config", "sweep.txt"]) == 0
    with open(workdir / "sweep" / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["delay_lines", "channels", "seed", "mae_deg"]
    assert [r[0] for r in rows[1:]] == ["11", "31"]
    assert all(float(r[3]) >= 0 for r in rows[1:])


def test_baseline_matches_direct_estimator_calls(workdir, monkeypatch):
    assert run_in(monkeypatch, workdir,
                  ["baseline", "--config", "cfg.txt"]) == 0
    with open(workdir / "baseline" / "baseline.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    entries = read_manifest(workdir / "dataset" / "manifest.csv")
    assert len(rows) - 1 == len(entries) * 2 * 6  # clips x windows x pairs

    # recompute the first clip's first window directly
    clip = read_wav(workdir / "dataset" / entries[0].path)
    window = clip_windows(clip, 0.170, 0.085)[0]
    direct = {(i, j): gcc_phat(window.samples[i], window.samples[j],
                               window.sample_rate, max_lag_s=25 / 16000.0).delay
              for i, j in combinations(range(4), 2)}
    for row in rows[1:7]:
        assert row[0] == entries[0].path and row[1] == "0"
        assert float(row[5]) == pytest.approx(direct[(int(row[2]),
                                                      int(row[3]))], abs=1e-12)


def test_unmatched_flag_and_missing_command_are_usage_errors(tmp_path,
                                                             monkeypatch):
    assert run_in(monkeypatch, tmp_path, ["simulate", "--bogus"]) == 1
    assert run_in(monkeypatch, tmp_path, []) == 1
