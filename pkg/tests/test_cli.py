import hashlib
import json

import numpy as np
import pytest

from evsim import dvs
from evsim.cli import main
from evsim.io import read_cis_frames, read_events_csv, write_frame_dir, write_pgm
from evsim.types import IntensityFrame

BASE = """\
fps = 30
threshold_pos = 0.15
threshold_neg = 0.15
pattern.width = 24
pattern.height = 16
pattern.fps = 960
pattern.duration = 100000
pattern.rate = 2e-5
pattern.base_intensity = 9000
"""


def write_cfg(tmp_path, text=BASE, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_simulate_pattern_writes_outputs_and_manifest(tmp_path):
    out = tmp_path / "out"
    rc = main(["simulate", "--config", write_cfg(tmp_path), "--pattern", "log_linear_ramp", "--out", str(out)])
    assert rc == 0
    ev = read_events_csv(out / "events.csv")
    assert len(ev) > 0 and set(np.unique(ev["p"])) <= {1}
    cis = read_cis_frames(out / "cis")
    assert len(cis) == 3 and cis[0].data.shape == (16, 24)
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["sensors"] == "cis+dvs"
    assert "pattern.kind = log_linear_ramp" in manifest["config_text"]
    for rel, digest in manifest["outputs"].items():
        assert sha(out / rel) == digest
    assert not list(out.glob(".evsim-staging-*"))


def test_dvs_only_on_two_identical_frames(tmp_path):
    src = tmp_path / "src"
    write_frame_dir([IntensityFrame(0, np.full((5, 6), 1000.0)), IntensityFrame(1000, np.full((5, 6), 1000.0))], src)
    cfg = write_cfg(tmp_path, "threshold_pos = 0.15\nthreshold_neg = 0.15\n")
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--input", str(src), "--out", str(out), "--dvs-only"]) == 0
    assert (out / "events.csv").read_text() == "t_us,x,y,p\n"
    assert not (out / "cis").exists()


def test_fixed_rate_run_writes_event_frames(tmp_path):
    cfg = write_cfg(tmp_path, BASE + "mode = fixed_rate(960)\n")
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--pattern", "checkerboard", "--out", str(out), "--dvs-only"]) == 0
    index = (out / "event_frames" / "events_index.csv").read_text().splitlines()
    assert index[0] == "frame,timestamp_us,path" and len(index) == 1 + 96


def test_missing_required_key_exits_1_naming_it(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BASE.replace("threshold_pos = 0.15\n", ""))
    rc = main(["simulate", "--config", cfg, "--pattern", "constant", "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "threshold_pos" in capsys.readouterr().err
    assert not (tmp_path / "o" / "run_manifest.json").exists()


@pytest.mark.parametrize("text, key", [(BASE + "threshhold = 1\n", "threshhold"), (BASE + "pattern.colour = 3\n", "colour"),
                                       (BASE + "fps = 31\n", "duplicate")])
def test_bad_config_exits_1(tmp_path, capsys, text, key):
    rc = main(["simulate", "--config", write_cfg(tmp_path, text), "--pattern", "constant", "--out", str(tmp_path / "o")])
    assert rc == 1 and key in capsys.readouterr().err


def test_missing_config_file_and_missing_input(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg"), "--pattern", "constant",
                 "--out", str(tmp_path / "o")]) == 1
    cfg = write_cfg(tmp_path)
    assert main(["simulate", "--config", cfg, "--input", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--pattern", "constant", "--out", str(tmp_path / "o")]) == 1


def test_single_frame_input_is_an_input_error(tmp_path):
    src = tmp_path / "src"
    write_frame_dir([IntensityFrame(0, np.full((4, 4), 10.0))], src)
    cfg = write_cfg(tmp_path, "threshold_pos = 0.15\nthreshold_neg = 0.15\n")
    assert main(["simulate", "--config", cfg, "--input", str(src), "--out", str(tmp_path / "o"), "--dvs-only"]) == 2


def test_seed_override_and_replay(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", "--config", cfg, "--pattern", "checkerboard", "--out", str(a), "--seed", "5"]) == 0
    assert main(["simulate", "--replay", str(a / "run_manifest.json"), "--out", str(b), "--threads", "3"]) == 0
    ma = json.loads((a / "run_manifest.json").read_text())
    mb = json.loads((b / "run_manifest.json").read_text())
    assert ma["seed"] == 5 and ma["outputs"] == mb["outputs"] and ma["config_text"] == mb["config_text"]
    assert main(["simulate", "--config", cfg, "--pattern", "checkerboard", "--out", str(c), "--seed", "6"]) == 0
    mc = json.loads((c / "run_manifest.json").read_text())
    assert mc["outputs"]["events.csv"] != ma["outputs"]["events.csv"]


def test_replay_keeps_sensor_selection(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--pattern", "flicker", "--out", str(a), "--cis-only"]) == 0
    assert main(["simulate", "--replay", str(a / "run_manifest.json"), "--out", str(b)]) == 0
    assert not (b / "events.csv").exists() and (b / "cis" / "cis_index.csv").exists()


def _seq(directory, frames):
    directory.mkdir()
    for i, f in enumerate(frames):
        write_pgm(directory / f"frame_{i * 1000}.pgm", f, maxval=255)


def test_metrics_dir_against_itself(tmp_path):
    rs = np.random.default_rng(0)
    frames = [rs.integers(0, 256, (64, 64)).astype(np.uint8) for _ in range(3)]
    _seq(tmp_path / "gt", frames)
    out = tmp_path / "m"
    assert main(["metrics", str(tmp_path / "gt"), str(tmp_path / "gt"), "--out", str(out), "--window", "21",
                 "--stride", "7"]) == 0
    summary = dict(line.split(",") for line in (out / "quality_summary.csv").read_text().splitlines()[1:])
    assert float(summary["mean_ssim"]) == 1.0 and summary["mean_psnr"] == "inf"
    assert float(summary["std_ssim"]) == 0.0 and summary["min_patch_psnr"] == "inf"
    assert float(summary["dynamic_range"]) == 255.0
    report = (out / "quality_report.csv").read_text().splitlines()
    assert report == ["frame,ssim,psnr", "0,1.0,inf", "1,1.0,inf", "2,1.0,inf"]
    assert len(list((out / "heatmaps").glob("*.csv"))) == 6


def test_metrics_input_errors(tmp_path, capsys):
    rs = np.random.default_rng(1)
    frames = [rs.integers(0, 256, (64, 64)).astype(np.uint8) for _ in range(3)]
    _seq(tmp_path / "a", frames)
    _seq(tmp_path / "b", frames[:2])
    assert main(["metrics", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "o")]) == 2
    assert "lengths differ" in capsys.readouterr().err
    assert main(["metrics", str(tmp_path / "a"), str(tmp_path / "a"), "--out", str(tmp_path / "o")]) == 2
    assert "too large" in capsys.readouterr().err
    assert main(["metrics", str(tmp_path / "a"), str(tmp_path / "zzz"), "--out", str(tmp_path / "o")]) == 2


def test_metrics_on_simulated_cis_output(tmp_path):
    cfg = write_cfg(tmp_path, BASE.replace("pattern.width = 24", "pattern.width = 40")
                    .replace("pattern.height = 16", "pattern.height = 32"))
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--pattern", "checkerboard", "--out", str(out), "--cis-only"]) == 0
    assert main(["metrics", str(out / "cis"), str(out / "cis"), "--out", str(tmp_path / "m"),
                 "--window", "21"]) == 0
    summary = (tmp_path / "m" / "quality_summary.csv").read_text()
    assert "dynamic_range,1023.0" in summary


def test_selftest_passes(capsys):
    assert main(["selftest", "--cases", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_selftest_catches_a_broken_crossing_rule(monkeypatch, capsys):
    # reference jumps two thresholds per crossing: the ramp law must fail
    monkeypatch.setattr(dvs, "_crossing_level", lambda ref, theta, up: ref + np.where(up, 2 * theta, -2 * theta))
    assert main(["selftest", "--cases", "2"]) == 1
    assert "FAIL  ramp law" in capsys.readouterr().out


def test_threads_must_be_positive(tmp_path):
    assert main(["simulate", "--config", write_cfg(tmp_path), "--pattern", "constant", "--out", str(tmp_path / "o"),
                 "--threads", "0"]) == 1
