"""Event-sensor model: per-pixel log-intensity threshold crossing.

Each source frame goes through lens shading, log conversion and a two-pole
low-pass filter.  Between consecutive frames the filtered log intensity is
taken to move linearly, and every crossing of the (noisy) threshold around
the pixel's reference level yields one event, unless the pixel is still
refractory.  Crossings always advance the reference level.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import rng
from ._validation import check_frames
from .types import (
    COLD,
    EVENT_DTYPE,
    HOT,
    NEVER,
    NORMAL,
    ConfigError,
    DvsConfig,
    EventFrame,
    IntensityFrame,
    PixelState,
    round_half_up,
)

__all__ = [
    "apply_lens_shading",
    "to_log_intensity",
    "lowpass_step",
    "assign_faults",
    "draw_threshold_offsets",
    "DvsSimulator",
    "fix_frame_rate",
    "simulate_dvs",
    "sort_events",
    "DvsSensor",
]

logger = logging.getLogger(__name__)

# absolute slack (log units) when testing a level against the interval end
CROSS_EPS = 1e-9
# the effective threshold never drops below this fraction of its mean
MIN_THRESHOLD_FRACTION = 0.1
# hot-pixel cadence when the refractory period is zero
HOT_DEFAULT_PERIOD_US = 100


def apply_lens_shading(frame, coeffs) -> IntensityFrame:
    """Scale intensities by a polynomial in distance from the image center.

    The distance is normalized by the frame width, so ``F = 1`` means one
    frame width away from the center.  Negative gains clip to zero.
    """
    coeffs = tuple(coeffs)
    if not coeffs:
        raise ConfigError("lens shading needs at least one coefficient", "lens_shading_coeffs")
    data = np.asarray(getattr(frame, "data", frame), dtype=np.float64)
    gain = shading_gain(data.shape, coeffs)
    out = data * gain
    if isinstance(frame, IntensityFrame):
        return IntensityFrame(frame.timestamp, out)
    return out


def shading_gain(shape, coeffs) -> np.ndarray:
    height, width = shape
    if len(coeffs) == 1:
        return np.full(shape, max(float(coeffs[0]), 0.0))
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    f = np.hypot(xx - cx, yy - cy) / width
    gain = np.polynomial.polynomial.polyval(f, coeffs)
    return np.maximum(gain, 0.0)


def to_log_intensity(frame, log_epsilon: float) -> np.ndarray:
    data = np.asarray(getattr(frame, "data", frame), dtype=np.float64)
    return np.log(data + log_epsilon)


def _tau_us(cfg: DvsConfig) -> float:
    return 1e6 / (2.0 * math.pi * cfg.lpf_cutoff_hz)


def lowpass_step(state: PixelState, log_input, dt: float, cfg: DvsConfig, linear_intensity=None) -> np.ndarray:
    """Advance the two cascaded first-order stages by ``dt`` microseconds.

    Updates ``state.lpf_state1``/``lpf_state2`` in place and returns the
    second-stage output.  With ``intensity_scaled_bandwidth`` the time
    constant grows as the pixel gets darker (``linear_intensity`` relative to
    ``full_scale``, clamped to [0.01, 1]).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.asarray(log_input, dtype=np.float64)
    tau = _tau_us(cfg)
    if cfg.intensity_scaled_bandwidth:
        if linear_intensity is None:
            raise ValueError("intensity_scaled_bandwidth needs the linear intensity")
        tau = tau / np.clip(np.asarray(linear_intensity) / cfg.full_scale, 0.01, 1.0)
    decay = np.exp(-dt / tau)
    # u + (y - u) * decay is exact when decay underflows to 0
    state.lpf_state1[...] = u + (state.lpf_state1 - u) * decay
    state.lpf_state2[...] = state.lpf_state1 + (state.lpf_state2 - state.lpf_state1) * decay
    return state.lpf_state2.copy()


def assign_faults(cfg: DvsConfig) -> np.ndarray:
    """Per-pixel fault codes (NORMAL/HOT/COLD), flat in row-major order."""
    n = cfg.width * cfg.height
    pix = np.arange(n, dtype=np.uint64)
    faulty = rng.uniform(cfg.seed, "faults", pix, 0) < cfg.bad_pixel_prob
    hot = rng.uniform(cfg.seed, "faults", pix, 1) < 0.5
    fault = np.full(n, NORMAL, dtype=np.int8)
    fault[faulty & hot] = HOT
    fault[faulty & ~hot] = COLD
    return fault


def draw_threshold_offsets(cfg: DvsConfig) -> np.ndarray:
    """Time-invariant per-pixel threshold mismatch, flat in row-major order."""
    n = cfg.width * cfg.height
    if cfg.mismatch_sigma == 0:
        return np.zeros(n)
    return cfg.mismatch_sigma * rng.normal(cfg.seed, "mismatch", np.arange(n, dtype=np.uint64), 0)


def _draw_noise(cfg: DvsConfig, pixels: np.ndarray, draws: np.ndarray) -> np.ndarray:
    noise = np.zeros(len(pixels))
    pix = pixels.astype(np.uint64)
    if cfg.external_noise_sigma > 0:
        noise += cfg.external_noise_sigma * rng.normal(cfg.seed, "external_noise", pix, draws)
    if cfg.inpixel_noise_sigma > 0:
        noise += cfg.inpixel_noise_sigma * rng.normal(cfg.seed, "inpixel_noise", pix, draws)
    return noise


def _crossing_level(ref, theta, up):
    return ref + np.where(up, theta, -theta)


def _grid_rate(event_fps: float) -> Fraction:
    return Fraction(event_fps).limit_denominator(10**6)


def _grid_index(t, start: int, rate: Fraction) -> np.ndarray:
    """Nearest grid index for integer timestamps, ties rounding up."""
    num, den = rate.numerator, rate.denominator
    t = np.asarray(t, dtype=np.int64)
    return (2 * (t - start) * num + den * 10**6) // (2 * den * 10**6)


def _grid_time(k, start: int, rate: Fraction) -> np.ndarray:
    num, den = rate.numerator, rate.denominator
    k = np.asarray(k, dtype=np.int64)
    return (2 * start * num + 2 * k * den * 10**6 + num) // (2 * num)


def sort_events(events: np.ndarray) -> np.ndarray:
    """Canonical (t, y, x) order; stable so same-pixel ties keep generation order."""
    order = np.lexsort((events["x"], events["y"], events["t"]))
    return events[order]


class DvsSimulator:
    """Stateful frame-by-frame converter.

    Construct with the first frame (which only initializes the reference
    levels), then feed later frames to :meth:`process_frame`.
    """

    def __init__(self, cfg: DvsConfig, first_frame: IntensityFrame, threshold_offset=None, fault=None,
                 threads: int = 1):
        if first_frame.data.shape != (cfg.height, cfg.width):
            raise ValueError(
                f"frame is {first_frame.width}x{first_frame.height}, sensor is {cfg.width}x{cfg.height}"
            )
        self.cfg = cfg
        self.threads = max(1, int(threads))
        n = cfg.width * cfg.height
        self._gain = shading_gain((cfg.height, cfg.width), cfg.lens_shading_coeffs).ravel()
        log0 = to_log_intensity(first_frame.data.ravel() * self._gain, cfg.log_epsilon)
        offsets = draw_threshold_offsets(cfg) if threshold_offset is None else np.ravel(threshold_offset).astype(float)
        faults = assign_faults(cfg) if fault is None else np.ravel(fault).astype(np.int8)
        if offsets.shape != (n,) or faults.shape != (n,):
            raise ValueError("threshold offsets and faults must have one entry per pixel")
        pixels = np.arange(n)
        draws = np.zeros(n, dtype=np.uint64)
        self.pixels = PixelState(
            ref_log=log0.copy(),
            lpf_state1=log0.copy(),
            lpf_state2=log0.copy(),
            threshold_offset=offsets,
            last_event_t=np.full(n, NEVER, dtype=np.int64),
            fault=faults,
            pending_noise=_draw_noise(cfg, pixels, draws),
            noise_draws=draws,
        )
        self.start_t = first_frame.timestamp
        self.last_frame_t = first_frame.timestamp
        self._v_prev = log0.copy()
        self._rate = _grid_rate(cfg.event_fps) if cfg.fixed_rate else None
        hot = np.nonzero(faults == HOT)[0]
        self._hot = hot
        # next hot emission: grid index in fixed mode, time otherwise
        self._hot_next = np.zeros(len(hot), dtype=np.int64)
        if not cfg.fixed_rate:
            self._hot_next += self.start_t + self.hot_period

    @property
    def hot_period(self) -> int:
        r = round_half_up(self.cfg.refractory_us)
        return r if r > 0 else HOT_DEFAULT_PERIOD_US

    @property
    def shape(self):
        return (self.cfg.height, self.cfg.width)

    def process_frame(self, frame: IntensityFrame) -> np.ndarray:
        """Return the events in ``(last_frame_t, frame.timestamp]``, sorted."""
        cfg = self.cfg
        if frame.data.shape != self.shape:
            raise ValueError(f"frame is {frame.width}x{frame.height}, sensor is {cfg.width}x{cfg.height}")
        if frame.timestamp <= self.last_frame_t:
            raise ValueError(f"timestamp {frame.timestamp} is not after {self.last_frame_t}")
        t0, t1 = self.last_frame_t, frame.timestamp
        shaded = frame.data.ravel() * self._gain
        v_new = lowpass_step(self.pixels, to_log_intensity(shaded, cfg.log_epsilon), t1 - t0, cfg, shaded)
        v_prev = self._v_prev

        n = v_new.shape[0]
        chunks = [np.arange(lo, hi) for lo, hi in _chunk_bounds(n, self.threads)]
        if self.threads == 1:
            parts = [self._crossings(c, v_prev, v_new, t0, t1) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                parts = list(pool.map(lambda c: self._crossings(c, v_prev, v_new, t0, t1), chunks))
        parts.append(self._hot_events(t0, t1))
        self._v_prev = v_new
        self.last_frame_t = t1
        return sort_events(np.concatenate(parts))

    def _crossings(self, pixels, v_prev, v_new, t0, t1) -> np.ndarray:
        cfg, st = self.cfg, self.pixels
        v0, v1 = v_prev[pixels], v_new[pixels]
        idx = pixels[(st.fault[pixels] == NORMAL) & (v1 != v0)]
        found = []
        while idx.size:
            a, b = v_prev[idx], v_new[idx]
            up = b > a
            base = np.where(up, cfg.threshold_pos, cfg.threshold_neg)
            theta = np.maximum(base + st.threshold_offset[idx] + st.pending_noise[idx],
                               MIN_THRESHOLD_FRACTION * base)
            level = _crossing_level(st.ref_log[idx], theta, up)
            crossed = np.where(up, b - level, level - b) >= -CROSS_EPS
            if not crossed.any():
                break
            idx, a, b, up, level = idx[crossed], a[crossed], b[crossed], up[crossed], level[crossed]
            frac = np.clip((level - a) / (b - a), 0.0, 1.0)
            ts = round_half_up(t0 + frac * (t1 - t0))
            ts = np.atleast_1d(ts)
            last = st.last_event_t[idx]
            emit = (last == NEVER) | (ts - last >= cfg.refractory_us)
            if emit.any():
                ev = np.empty(int(emit.sum()), dtype=EVENT_DTYPE)
                ev["t"] = ts[emit]
                ev["x"] = idx[emit] % cfg.width
                ev["y"] = idx[emit] // cfg.width
                ev["p"] = np.where(up[emit], 1, -1)
                found.append(ev)
                st.last_event_t[idx[emit]] = ts[emit]
            st.ref_log[idx] = level
            st.noise_draws[idx] += np.uint64(1)
            st.pending_noise[idx] = _draw_noise(cfg, idx, st.noise_draws[idx])
        if not found:
            return np.empty(0, dtype=EVENT_DTYPE)
        return np.concatenate(found)

    def _hot_events(self, t0: int, t1: int) -> np.ndarray:
        if not len(self._hot):
            return np.empty(0, dtype=EVENT_DTYPE)
        width = self.cfg.width
        times, pix = [], []
        for j, p in enumerate(self._hot):
            if self._rate is not None:
                k_hi = int(_grid_index(t1, self.start_t, self._rate))
                ks = np.arange(self._hot_next[j], k_hi + 1)
                ts = _grid_time(ks, self.start_t, self._rate)
                ks, ts = ks[ts <= t1], ts[ts <= t1]
                if len(ks):
                    self._hot_next[j] = ks[-1] + 1
            else:
                nxt = int(self._hot_next[j])
                ts = np.arange(nxt, t1 + 1, self.hot_period, dtype=np.int64)
                if len(ts):
                    self._hot_next[j] = ts[-1] + self.hot_period
            if len(ts):
                self.pixels.last_event_t[p] = ts[-1]
            times.append(ts)
            pix.append(np.full(len(ts), p))
        times, pix = np.concatenate(times), np.concatenate(pix)
        ev = np.empty(len(times), dtype=EVENT_DTYPE)
        ev["t"], ev["x"], ev["y"], ev["p"] = times, pix % width, pix // width, 1
        return ev


def _chunk_bounds(n: int, parts: int):
    edges = np.linspace(0, n, min(parts, max(n, 1)) + 1).astype(int)
    return list(zip(edges[:-1], edges[1:]))


def fix_frame_rate(events: np.ndarray, event_fps: float, start: int, end: int, width: int, height: int):
    """Snap events onto the event-frame grid and build the frames.

    Grid timestamps are ``start + k * 1e6 / event_fps`` (rounded half-up to
    integer microseconds).  When several events of one pixel land on one grid
    point, the earliest one wins.  Returns ``(snapped_events, frames)``;
    frames cover the grid points in ``[start, end)``, empty ones included.
    """
    rate = _grid_rate(event_fps)
    events = np.asarray(events, dtype=EVENT_DTYPE)
    order = np.argsort(events["t"], kind="stable")
    events = events[order]
    k = _grid_index(events["t"], start, rate)
    pix = events["y"].astype(np.int64) * width + events["x"]
    _, first = np.unique(k * (width * height) + pix, return_index=True)
    first.sort()
    kept = events[first].copy()
    k_kept = k[first]
    kept["t"] = _grid_time(k_kept, start, rate)

    # grid points in [start, end), extended to any point an event rounds to
    last = int(_grid_index(end, start, rate))
    while last >= 0 and int(_grid_time(last, start, rate)) >= end:
        last -= 1
    n_frames = max(last, int(k_kept.max()) if len(k_kept) else -1) + 1
    grids = np.zeros((n_frames, height, width), dtype=np.int8)
    grids[k_kept, kept["y"], kept["x"]] = kept["p"]
    stamps = _grid_time(np.arange(n_frames), start, rate)
    frames = [EventFrame(int(t), g) for t, g in zip(stamps, grids)]
    return sort_events(kept), frames


def simulate_dvs(source, cfg: DvsConfig, threads: int = 1, threshold_offset=None, fault=None):
    """Run a full conversion; returns ``(events, event_frames or None)``.

    Mismatch offsets and faults are drawn once per run from ``cfg.seed``
    unless given explicitly.
    """
    frames = check_frames(source, min_frames=2)
    sim = DvsSimulator(cfg, frames[0], threshold_offset=threshold_offset, fault=fault, threads=threads)
    parts = [sim.process_frame(f) for f in frames[1:]]
    events = np.concatenate(parts) if parts else np.empty(0, dtype=EVENT_DTYPE)
    logger.info("DVS: %d frames -> %d events", len(frames), len(events))
    if not cfg.fixed_rate:
        return events, None
    # the last source frame holds for one more interval, as on the CIS side
    end = 2 * frames[-1].timestamp - frames[-2].timestamp
    return fix_frame_rate(events, cfg.event_fps, frames[0].timestamp, end, cfg.width, cfg.height)


class DvsSensor(TransformerMixin, BaseEstimator):
    """Event-sensor simulator with the scikit-learn transformer interface.

    ``fit`` draws this run's camera: the per-pixel threshold mismatch
    (``threshold_offset_``) and the hot/cold pixel map (``faults_``).
    ``transform`` converts a frame sequence to a structured event array
    (fields ``t``, ``x``, ``y``, ``p``); in fixed-rate mode the matching
    event frames are kept in ``event_frames_``.
    """

    def __init__(
        self,
        threshold_pos=0.15,
        threshold_neg=0.15,
        mismatch_sigma=0.015,
        external_noise_sigma=0.035,
        inpixel_noise_sigma=0.0,
        refractory_us=100.0,
        bad_pixel_prob=0.0,
        lens_shading_coeffs=(1.0,),
        lpf_cutoff_hz=300.0,
        intensity_scaled_bandwidth=False,
        full_scale=65535.0,
        mode="free_running",
        log_epsilon=1.0,
        seed=0,
        width=None,
        height=None,
        n_jobs=1,
    ):
        self.threshold_pos = threshold_pos
        self.threshold_neg = threshold_neg
        self.mismatch_sigma = mismatch_sigma
        self.external_noise_sigma = external_noise_sigma
        self.inpixel_noise_sigma = inpixel_noise_sigma
        self.refractory_us = refractory_us
        self.bad_pixel_prob = bad_pixel_prob
        self.lens_shading_coeffs = lens_shading_coeffs
        self.lpf_cutoff_hz = lpf_cutoff_hz
        self.intensity_scaled_bandwidth = intensity_scaled_bandwidth
        self.full_scale = full_scale
        self.mode = mode
        self.log_epsilon = log_epsilon
        self.seed = seed
        self.width = width
        self.height = height
        self.n_jobs = n_jobs

    @classmethod
    def from_config(cls, cfg: DvsConfig, n_jobs: int = 1) -> "DvsSensor":
        return cls(**dataclasses.asdict(cfg), n_jobs=n_jobs)

    def fit(self, X, y=None):
        frames = check_frames(X, min_frames=1)
        height, width = frames[0].data.shape
        params = {k: v for k, v in self.get_params().items() if k != "n_jobs"}
        params["width"] = width if self.width is None else self.width
        params["height"] = height if self.height is None else self.height
        self.config_ = DvsConfig(**params)
        shape = (self.config_.height, self.config_.width)
        self.threshold_offset_ = draw_threshold_offsets(self.config_).reshape(shape)
        self.faults_ = assign_faults(self.config_).reshape(shape)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        frames = check_frames(X, min_frames=2, shape=self.faults_.shape)
        events, event_frames = simulate_dvs(
            frames, self.config_, threads=self.n_jobs,
            threshold_offset=self.threshold_offset_, fault=self.faults_,
        )
        self.event_frames_ = event_frames
        return events
