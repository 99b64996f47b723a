"""Brute-force reference models used by the self-test and the test suite.

These deliberately avoid the simulator's code paths: per-pixel scalar
arithmetic, fixed fine time steps and direct per-row sampling.
"""
from __future__ import annotations

import math

import numpy as np

from .patterns import PatternSpec, frame_time, pattern_frame

__all__ = ["reference_events", "reference_rolling_rows", "edge_columns"]

FINE_STEP_US = 0.1
LEVEL_EPS = 1e-9


def _scalar_gain(x: int, y: int, width: int, height: int, coeffs) -> float:
    f = math.hypot(x - (width - 1) / 2.0, y - (height - 1) / 2.0) / width
    g = 0.0
    for i, c in enumerate(coeffs):
        g += c * f**i
    return max(g, 0.0)


def _filtered_logs(samples, stamps, cfg) -> list:
    """Scalar two-stage low-pass of the log intensity, one value per frame."""
    tau = 1e6 / (2.0 * math.pi * cfg.lpf_cutoff_hz)
    y0 = math.log(samples[0] + cfg.log_epsilon)
    s1 = s2 = y0
    out = [y0]
    for k in range(1, len(samples)):
        u = math.log(samples[k] + cfg.log_epsilon)
        tk = tau
        if cfg.intensity_scaled_bandwidth:
            tk = tau / min(max(samples[k] / cfg.full_scale, 0.01), 1.0)
        d = math.exp(-(stamps[k] - stamps[k - 1]) / tk)
        s1 = u + (s1 - u) * d
        s2 = s1 + (s2 - s1) * d
        out.append(s2)
    return out


def _refine(value_at, lo: float, hi: float, level: float, polarity: int, rounds: int = 3) -> float:
    """Narrow a crossing inside ``(lo, hi]`` by repeated 1000-way sub-stepping."""
    for _ in range(rounds):
        ts = np.linspace(lo, hi, 1001)[1:]
        vals = value_at(ts)
        hit = vals >= level if polarity > 0 else vals <= level
        if not hit.any():
            return hi  # reached only within LEVEL_EPS at the interval end
        j = int(np.argmax(hit))
        lo, hi = (ts[j - 1] if j else lo), ts[j]
    return hi


def reference_events(frames, cfg, step_us: float = FINE_STEP_US) -> np.ndarray:
    """Noise-free events found by walking each interval in ``step_us`` steps.

    A detected crossing is then located inside its fine step by nested
    sub-stepping, so refractory decisions near the boundary match the exact
    crossing time rather than the fine-grid one.

    Requires zero mismatch/noise and no faulty pixels.  Returns an ``(n, 4)``
    integer array of ``(t, x, y, p)`` rows sorted by pixel then time.
    """
    if cfg.mismatch_sigma or cfg.external_noise_sigma or cfg.inpixel_noise_sigma or cfg.bad_pixel_prob:
        raise ValueError("reference integrator is noise-free only")
    stamps = [f.timestamp for f in frames]
    rows = []
    for y in range(cfg.height):
        for x in range(cfg.width):
            gain = _scalar_gain(x, y, cfg.width, cfg.height, cfg.lens_shading_coeffs)
            samples = [float(f.data[y, x]) * gain for f in frames]
            v = _filtered_logs(samples, stamps, cfg)
            ref = v[0]
            last = None
            for k in range(1, len(frames)):
                t0, t1 = stamps[k - 1], stamps[k]
                n = int(round((t1 - t0) / step_us))
                j = np.arange(1, n + 1)
                vals = v[k - 1] + (v[k] - v[k - 1]) * (j / n)
                times = t0 + (t1 - t0) * (j / n)
                pos = 0
                while pos < n:
                    up_hit = vals[pos:] - (ref + cfg.threshold_pos) >= -LEVEL_EPS
                    dn_hit = (ref - cfg.threshold_neg) - vals[pos:] >= -LEVEL_EPS
                    hit = up_hit | dn_hit
                    if not hit.any():
                        break
                    pos += int(np.argmax(hit))
                    polarity = 1 if up_hit[np.argmax(hit)] else -1
                    level = ref + (cfg.threshold_pos if polarity > 0 else -cfg.threshold_neg)
                    lo = times[pos - 1] if pos > 0 else float(t0)
                    t_hit = _refine(lambda t: v[k - 1] + (v[k] - v[k - 1]) * ((t - t0) / (t1 - t0)),
                                    lo, times[pos], level, polarity)
                    ref = level
                    ts = math.floor(t_hit + 0.5)
                    if last is None or ts - last >= cfg.refractory_us:
                        rows.append((ts, x, y, polarity))
                        last = ts
                    # several levels may fall inside one fine step; stay put
    out = np.array(rows, dtype=np.int64).reshape(-1, 4)
    order = np.lexsort((out[:, 0], out[:, 1], out[:, 2]))
    return out[order]


def reference_rolling_rows(spec: PatternSpec, frame_start: int, line_readout_time: float) -> np.ndarray:
    """Zero-exposure rolling-shutter image by direct per-row sampling."""
    out = np.empty((spec.height, spec.width))
    for r in range(spec.height):
        t = math.floor(frame_start + r * line_readout_time + 0.5)
        k = 0
        while frame_time(spec, k + 1) <= t:
            k += 1
        out[r] = pattern_frame(spec, k)[r]
    return out


def edge_columns(image: np.ndarray, threshold: float) -> np.ndarray:
    """Per row, the first column at or below ``threshold`` (bright-left edge)."""
    below = np.asarray(image) <= threshold
    cols = np.argmax(below, axis=1)
    cols[~below.any(axis=1)] = image.shape[1]
    return cols
