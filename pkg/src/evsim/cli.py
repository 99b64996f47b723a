"""``evsim`` command line: simulate, metrics, selftest.

Exit codes: 0 success, 1 configuration error (or failed self-test),
2 input error (unreadable or insufficient frames, coverage, mismatched
sequences, image smaller than the patch window).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cis import simulate_cis
from .dvs import simulate_dvs
from .io import (
    read_frame_dir,
    read_image_sequence,
    write_cis_frames,
    write_event_frames,
    write_events_csv,
    write_heatmap,
)
from .metrics import PATCH_STRIDE, PATCH_WINDOW, sequence_report
from .patterns import PatternSpec, generate
from .selftest import run_selftest
from .types import CisConfig, ConfigError, CoverageError, DvsConfig, parse_key_values

logger = logging.getLogger("evsim")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT = 0, 1, 2
MANIFEST_NAME = "run_manifest.json"


class InputError(Exception):
    pass


@dataclass
class RunManifest:
    config_path: str
    config_text: str
    input: dict
    out_dir: str
    seed: int
    tool_version: str
    wall_clock_s: float
    threads: int
    sensors: str = "cis+dvs"
    outputs: dict = field(default_factory=dict)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# config resolution


def split_run_config(values: dict) -> tuple:
    """Split flat keys into (sensor keys, pattern keys); unknown keys raise."""
    known = set(CisConfig.field_names()) | set(DvsConfig.field_names())
    sensor, pattern = {}, {}
    for key, value in values.items():
        if key.startswith("pattern."):
            pattern[key[len("pattern."):]] = value
        elif key in known:
            sensor[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}", key)
    return sensor, pattern


def build_configs(sensor: dict, *, want_cis: bool, want_dvs: bool, shape=None, seed=None) -> tuple:
    sensor = dict(sensor)
    if shape is not None:
        sensor.setdefault("height", str(shape[0]))
        sensor.setdefault("width", str(shape[1]))
    if seed is not None:
        sensor["seed"] = str(seed)
    cis = dvs = None
    if want_cis:
        cis = CisConfig.from_mapping({k: v for k, v in sensor.items() if k in CisConfig.field_names()})
    if want_dvs:
        dvs = DvsConfig.from_mapping({k: v for k, v in sensor.items() if k in DvsConfig.field_names()})
    return cis, dvs


def resolved_text(cis, dvs, pattern) -> str:
    merged = {}
    for cfg in (cis, dvs):
        if cfg is not None:
            merged.update(parse_key_values(cfg.to_text()))
    lines = [f"{k} = {v}" for k, v in merged.items()]
    if pattern is not None:
        lines += [f"pattern.{line}" for line in pattern.to_text().splitlines()]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_source(args, pattern_keys: dict, sensor_keys: dict):
    if args.input:
        try:
            frames = read_frame_dir(args.input)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read input frames: {exc}") from exc
        return frames, None, {"kind": "dir", "path": str(Path(args.input).resolve())}
    kind = args.pattern or pattern_keys.get("kind")
    if not kind:
        raise ConfigError("no input: pass --input, --pattern or set pattern.kind", "pattern.kind")
    values = dict(pattern_keys, kind=kind)
    for key in ("width", "height"):
        if key not in values and key in sensor_keys:
            values[key] = sensor_keys[key]
    try:
        spec = PatternSpec.from_mapping(values)
    except ConfigError as exc:
        key = f"pattern.{exc.key}" if exc.key else None
        raise ConfigError(str(exc).replace(repr(exc.key), repr(key)), key) from None
    return generate(spec), spec, {"kind": "pattern", "spec": spec.to_text()}


def _run_simulation(args, config_text: str, config_path: str) -> int:
    started = time.perf_counter()
    sensor_keys, pattern_keys = split_run_config(parse_key_values(config_text))
    want_cis, want_dvs = not args.dvs_only, not args.cis_only
    frames, spec, input_desc = _load_source(args, pattern_keys, sensor_keys)
    shape = frames[0].data.shape if frames else None
    cis_cfg, dvs_cfg = build_configs(sensor_keys, want_cis=want_cis, want_dvs=want_dvs, shape=shape,
                                     seed=args.seed)
    for cfg in (cis_cfg, dvs_cfg):
        if cfg is not None and shape is not None and (cfg.height, cfg.width) != shape:
            raise InputError(f"input frames are {shape[1]}x{shape[0]}, config says {cfg.width}x{cfg.height}")
    if want_dvs and len(frames) < 2:
        raise InputError(f"event conversion needs at least 2 frames, got {len(frames)}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".evsim-staging-", dir=out))
    try:
        if want_cis:
            write_cis_frames(simulate_cis(frames, cis_cfg, threads=args.threads), staging / "cis")
        if want_dvs:
            events, event_frames = simulate_dvs(frames, dvs_cfg, threads=args.threads)
            write_events_csv(events, staging / "events.csv")
            if event_frames is not None:
                write_event_frames(event_frames, staging / "event_frames")
        outputs = {}
        for p in sorted(staging.rglob("*")):
            if p.is_file():
                rel = p.relative_to(staging)
                outputs[rel.as_posix()] = _sha256(p)
                dest = out / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                shutil.move(str(p), dest)
    finally:
        shutil.rmtree(staging, ignore_errors=True)

    seed = (cis_cfg or dvs_cfg).seed
    RunManifest(
        config_path=config_path,
        config_text=resolved_text(cis_cfg, dvs_cfg, spec),
        input=input_desc,
        out_dir=str(out.resolve()),
        seed=seed,
        tool_version=__version__,
        wall_clock_s=round(time.perf_counter() - started, 3),
        threads=args.threads,
        sensors="+".join(name for name, on in (("cis", want_cis), ("dvs", want_dvs)) if on),
        outputs=outputs,
    ).write(out / MANIFEST_NAME)
    logger.info("wrote %d files to %s", len(outputs), out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        if args.replay:
            manifest = RunManifest.read(args.replay)
            config_text, config_path = manifest.config_text, manifest.config_path
            if manifest.input["kind"] == "dir":
                args.input = manifest.input["path"]
            args.seed = None
            args.cis_only = manifest.sensors == "cis"
            args.dvs_only = manifest.sensors == "dvs"
        else:
            config_path = str(Path(args.config).resolve())
            config_text = Path(args.config).read_text(encoding="utf-8")
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: cannot read {args.replay or args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _run_simulation(args, config_text, config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, CoverageError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _fmt(x: float) -> str:
    return "inf" if np.isposinf(x) else ("-inf" if np.isneginf(x) else repr(float(x)))


def cmd_metrics(args) -> int:
    try:
        truth, maxval = read_image_sequence(args.ground_truth)
        cand, _ = read_image_sequence(args.candidate)
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if len(truth) != len(cand):
        print(f"input error: sequence lengths differ ({len(truth)} vs {len(cand)})", file=sys.stderr)
        return EXIT_INPUT
    h, w = truth[0].shape
    if args.window > h or args.window > w:
        print(f"input error: {args.window}x{args.window} window is too large for {w}x{h} frames", file=sys.stderr)
        return EXIT_INPUT
    dynamic_range = args.dynamic_range if args.dynamic_range else float(maxval)
    heatmaps = []
    try:
        report = sequence_report(truth, cand, dynamic_range, args.window, args.stride, heatmaps=heatmaps)
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    with (out / "quality_report.csv").open("w") as fh:
        fh.write("frame,ssim,psnr\n")
        for i, s, p in report.per_frame:
            fh.write(f"{i},{_fmt(s)},{_fmt(p)}\n")
    with (out / "quality_summary.csv").open("w") as fh:
        fh.write("metric,value\n")
        for key in ("mean_ssim", "min_ssim", "std_ssim", "min_patch_ssim",
                    "mean_psnr", "min_psnr", "std_psnr", "min_patch_psnr"):
            fh.write(f"{key},{_fmt(getattr(report, key))}\n")
        fh.write(f"dynamic_range,{_fmt(dynamic_range)}\npatch_window,{args.window}\npatch_stride,{args.stride}\n")
    for i, (hs, hp) in enumerate(heatmaps):
        write_heatmap(hs, out / "heatmaps" / f"ssim_{i:06d}")
        write_heatmap(hp, out / "heatmaps" / f"psnr_{i:06d}")
    print(f"mean SSIM {report.mean_ssim:.4f}  mean PSNR {_fmt(report.mean_psnr)} dB  ({len(truth)} frames)")
    return EXIT_OK


def cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest(n_cases=args.cases) else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evsim", description="Frame and event sensor simulator.")
    parser.add_argument("--version", action="version", version=f"evsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="convert frames into CIS frames and/or DVS events")
    sim.add_argument("--config", help="key = value config file")
    src = sim.add_mutually_exclusive_group()
    src.add_argument("--input", help="directory of frame_<t_us>.pgm files or with manifest.csv")
    src.add_argument("--pattern", help="synthetic pattern kind (parameters from pattern.* keys)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, help="override the config seed")
    only = sim.add_mutually_exclusive_group()
    only.add_argument("--cis-only", action="store_true")
    only.add_argument("--dvs-only", action="store_true")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--replay", help="re-run from a previous run_manifest.json")
    sim.set_defaults(func=cmd_simulate)

    met = sub.add_parser("metrics", help="score a candidate sequence against ground truth")
    met.add_argument("ground_truth")
    met.add_argument("candidate")
    met.add_argument("--out", required=True)
    met.add_argument("--window", type=int, default=PATCH_WINDOW)
    met.add_argument("--stride", type=int, default=PATCH_STRIDE)
    met.add_argument("--dynamic-range", type=float, default=None,
                     help="peak value R (default: PGM maxval of the ground truth)")
    met.set_defaults(func=cmd_metrics)

    st = sub.add_parser("selftest", help="run the brute-force equivalence checks")
    st.add_argument("--cases", type=int, default=10, help="random 8x8 scenes to compare")
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("EVSIM_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        if not args.config and not args.replay:
            print("config error: --config or --replay is required", file=sys.stderr)
            return EXIT_CONFIG
        if args.threads < 1:
            print("config error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
