"""Release gate: simulator versus brute-force references on desk-scale scenes."""
from __future__ import annotations

import time

import numpy as np

from .cis import integrate_exposure, simulate_cis
from .dvs import simulate_dvs
from .oracles import edge_columns, reference_events, reference_rolling_rows
from .patterns import PatternSpec, generate
from .types import CisConfig, DvsConfig, IntensityFrame

__all__ = ["random_case", "events_as_rows", "check_ramp_law", "check_brute_force", "check_rolling_shear",
           "check_refractory", "run_selftest"]


def events_as_rows(events) -> np.ndarray:
    """Events as an ``(n, 4)`` int array sorted by pixel then time."""
    rows = np.column_stack([events["t"], events["x"], events["y"], events["p"]]).astype(np.int64)
    return rows[np.lexsort((rows[:, 0], rows[:, 1], rows[:, 2]))]


def random_case(rs: np.random.Generator, size: int = 8, n_frames: int = 10):
    """A noise-free random 8x8 scene and sensor config."""
    kind = str(rs.choice(["horizontal_ramp", "moving_edge", "log_linear_ramp", "checkerboard", "flicker"]))
    fps = float(rs.choice([500.0, 960.0, 1000.0, 2000.0]))
    spec = PatternSpec(
        kind=kind, width=size, height=size, fps=fps, duration=n_frames * 1e6 / fps,
        base_intensity=float(rs.uniform(100, 5000)), amplitude=float(rs.uniform(100, 20000)),
        velocity=float(rs.uniform(0.3, 2.5)), edge_start=float(rs.uniform(0, 4)),
        rate=float(rs.uniform(-1e-3, 1e-3)), cell=int(rs.integers(1, 4)),
        frequency=float(rs.uniform(5, 200)), depth=float(rs.uniform(0.1, 0.9)),
    )
    cfg = DvsConfig(
        width=size, height=size,
        threshold_pos=float(rs.uniform(0.05, 0.4)), threshold_neg=float(rs.uniform(0.05, 0.4)),
        mismatch_sigma=0.0, external_noise_sigma=0.0, inpixel_noise_sigma=0.0,
        refractory_us=float(rs.choice([0.0, 50.0, 100.0, 300.0])),
        lpf_cutoff_hz=float(rs.uniform(100, 3000)),
        lens_shading_coeffs=(1.0, float(rs.uniform(-0.8, 0.2)), float(rs.uniform(-0.3, 0.3))),
        intensity_scaled_bandwidth=bool(rs.integers(2)),
    )
    return spec, cfg


def ramp_case(delta: float = 0.9, theta: float = 0.15, span_us: int = 6000, refractory: float = 0.0):
    """One-pixel scene whose log intensity rises by ``delta`` over one interval."""
    cfg = DvsConfig(
        width=1, height=1, threshold_pos=theta, threshold_neg=theta,
        mismatch_sigma=0.0, external_noise_sigma=0.0, inpixel_noise_sigma=0.0,
        refractory_us=refractory, lpf_cutoff_hz=1e9, log_epsilon=1e-12,
    )
    spec = PatternSpec(kind="log_linear_ramp", width=1, height=1, fps=1e6 / span_us,
                       duration=2 * span_us, base_intensity=1000.0, rate=delta / span_us)
    return generate(spec), cfg


def check_ramp_law():
    frames, cfg = ramp_case()
    events, _ = simulate_dvs(frames, cfg)
    expected = reference_events(frames, cfg)
    gaps = np.diff(np.concatenate([[frames[0].timestamp], events["t"]]))
    ok = (
        len(events) == 6 == len(expected)
        and bool(np.all(events["p"] == 1))
        and int(np.abs(gaps - 1000).max()) <= 1
        and bool(np.all(np.abs(events["t"] - expected[:, 0]) <= 1))
    )
    return ok, f"{len(events)} events (reference {len(expected)}), gaps {gaps.tolist()}"


def check_brute_force(n_cases: int = 10, seed: int = 20240611):
    rs = np.random.default_rng(seed)
    worst, failures, total = 0, [], 0
    for i in range(n_cases):
        spec, cfg = random_case(rs)
        frames = generate(spec)
        got = events_as_rows(simulate_dvs(frames, cfg)[0])
        ref = reference_events(frames, cfg)
        total += len(ref)
        if len(got) != len(ref) or not np.array_equal(got[:, 1:], ref[:, 1:]):
            failures.append(i)
            continue
        if len(got):
            worst = max(worst, int(np.abs(got[:, 0] - ref[:, 0]).max()))
            if worst > 1:
                failures.append(i)
    return not failures, f"{n_cases} scenes, {total} events, max |dt| {worst} us, failing {failures}"


def rolling_case(velocity: float = 2.0, height: int = 16, width: int = 64):
    spec = PatternSpec(kind="moving_edge", width=width, height=height, fps=1000.0,
                       duration=(height + 6) * 1000.0, base_intensity=100.0, amplitude=500.0,
                       velocity=velocity, edge_start=2.0)
    cfg = CisConfig(width=width, height=height, fps=1e6 / (height * 1000.0), exposure_time=0.0,
                    line_readout_time=1000.0, min_illuminance=0.0, slope=1.0, noise_lsb=0.0)
    return spec, cfg


def check_rolling_shear():
    spec, cfg = rolling_case()
    frames = generate(spec)
    blurred = integrate_exposure(frames, cfg, frames[0].timestamp).data
    ref = reference_rolling_rows(spec, frames[0].timestamp, cfg.line_readout_time)
    cis = simulate_cis(frames, cfg)[0].data
    cols = edge_columns(cis, 350)
    shear = np.diff(cols)
    ok = np.array_equal(blurred, ref) and bool(np.all(shear == 2))
    return ok, f"edge columns {cols.tolist()}"


def check_refractory():
    spec = PatternSpec(kind="flicker", width=8, height=8, fps=2000.0, duration=200_000.0,
                       base_intensity=2000.0, frequency=60.0, depth=0.9)
    cfg = DvsConfig(width=8, height=8, threshold_pos=0.05, threshold_neg=0.05, refractory_us=100.0,
                    lpf_cutoff_hz=2000.0, seed=3)
    events, _ = simulate_dvs(generate(spec), cfg)
    rows = events_as_rows(events)
    same = (np.diff(rows[:, 1]) == 0) & (np.diff(rows[:, 2]) == 0)
    gaps = np.diff(rows[:, 0])[same]
    bad = int(np.sum(gaps < 100))
    return bad == 0 and len(events) > 0, f"{len(events)} events, {bad} violations"


def run_selftest(n_cases: int = 10, out=print) -> bool:
    checks = [
        ("ramp law", check_ramp_law),
        ("brute-force equivalence (8x8)", lambda: check_brute_force(n_cases)),
        ("rolling-shutter shear", check_rolling_shear),
        ("refractory enforcement", check_refractory),
    ]
    all_ok = True
    for name, fn in checks:
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}  ({time.perf_counter() - start:.2f}s)  {detail}")
    return all_ok
