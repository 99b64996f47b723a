"""Frame-sensor model: rolling-shutter exposure, operation range and ADC noise."""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import rng
from ._validation import check_frames
from .types import CisConfig, CisFrame, CoverageError, IntensityFrame, round_half_up

__all__ = [
    "integrate_exposure",
    "apply_operation_range",
    "apply_adc_noise",
    "simulate_cis",
    "CisSensor",
]

logger = logging.getLogger(__name__)

ADC_MAX = 1023


def _coverage_end(stamps: np.ndarray) -> int:
    # the last frame holds for as long as the interval before it
    if len(stamps) < 2:
        return int(stamps[-1])
    return int(stamps[-1] + (stamps[-1] - stamps[-2]))


def _row_starts(frame_start: int, height: int, line_readout_time: float) -> np.ndarray:
    return round_half_up(frame_start + np.arange(height) * float(line_readout_time))


def _integrate_rows(frames, stamps, cov_hi, cfg, frame_start, rows) -> np.ndarray:
    starts = _row_starts(frame_start, cfg.height, cfg.line_readout_time)[rows]
    exposure = float(cfg.exposure_time)
    ends = starts + exposure
    cov_lo = int(stamps[0])
    if starts.min() < cov_lo:
        span = (float(starts.min()), cov_lo)
        raise CoverageError(f"no source frames for [{span[0]:g}, {span[1]}) us", span)
    if ends.max() > cov_hi:
        span = (cov_hi, float(ends.max()))
        raise CoverageError(f"no source frames for ({span[0]}, {span[1]:g}] us", span)

    if exposure == 0:
        active = np.clip(np.searchsorted(stamps, starts, side="right") - 1, 0, len(frames) - 1)
        return np.stack([frames[k].data[r] for r, k in zip(rows, active)])
    seg_lo = stamps.astype(np.float64)
    seg_hi = np.append(stamps[1:], cov_hi).astype(np.float64)
    overlap = np.minimum(ends[:, None], seg_hi[None, :]) - np.maximum(starts[:, None], seg_lo[None, :])
    weights = np.clip(overlap, 0.0, None) / exposure
    used = np.nonzero(weights.any(axis=0))[0]
    stack = np.stack([frames[k].data[rows] for k in used])
    return np.einsum("rk,krw->rw", weights[:, used], stack)


def integrate_exposure(source, cfg: CisConfig, frame_start: int) -> IntensityFrame:
    """Average each row over its own exposure window.

    Row ``r`` integrates ``[frame_start + r*line_readout_time, ... + exposure_time]``
    with each source frame held until the next (zero-order hold; the last
    frame holds for one more source interval).  Zero exposure point-samples
    the frame active at the row start.
    """
    frames = check_frames(source, min_frames=1)
    if frames[0].data.shape != (cfg.height, cfg.width):
        raise ValueError(f"source frames are {frames[0].width}x{frames[0].height}, config expects {cfg.width}x{cfg.height}")
    stamps = np.array([f.timestamp for f in frames], dtype=np.int64)
    rows = np.arange(cfg.height)
    data = _integrate_rows(frames, stamps, _coverage_end(stamps), cfg, int(frame_start), rows)
    return IntensityFrame(int(frame_start), data)


def apply_operation_range(frame, cfg: CisConfig) -> np.ndarray:
    """Map linear intensity to real-valued digital numbers in [0, 1023]."""
    data = np.asarray(getattr(frame, "data", frame), dtype=np.float64)
    return np.clip((data - cfg.min_illuminance) / cfg.slope, 0.0, ADC_MAX)


def apply_adc_noise(dn, cfg: CisConfig, frame_index: int = 0, timestamp: int = 0) -> CisFrame:
    """Add Gaussian ADC noise (in LSB), round half-up and clamp to 10 bits."""
    dn = np.asarray(dn, dtype=np.float64)
    if cfg.noise_lsb > 0:
        pixels = np.arange(dn.size, dtype=np.uint64)
        g = rng.normal(cfg.seed, "cis_noise", pixels, frame_index).reshape(dn.shape)
        dn = dn + cfg.noise_lsb * g
    out = np.clip(np.floor(dn + 0.5), 0, ADC_MAX).astype(np.uint16)
    return CisFrame(int(timestamp), out)


def _frame_count(stamps: np.ndarray, cfg: CisConfig) -> int:
    """floor(duration * fps), allowing the 1 us lost to timestamp rounding.

    Frames whose capture would run past the covered span are dropped.
    """
    t0, cov_hi = int(stamps[0]), _coverage_end(stamps)
    rate = Fraction(cfg.fps).limit_denominator(10**6)
    n = int((cov_hi - t0 + 1) * rate.numerator // (rate.denominator * 10**6))
    def last_row_end(i):
        start = round_half_up(t0 + i * cfg.frame_period)
        return _row_starts(start, cfg.height, cfg.line_readout_time)[-1] + cfg.exposure_time

    while n > 0 and last_row_end(n - 1) > cov_hi:
        n -= 1
    return n


def simulate_cis(source, cfg: CisConfig, threads: int = 1) -> list:
    """Convert a high-rate source into degraded frames at ``cfg.fps``."""
    frames = check_frames(source)
    if not frames:
        return []
    if frames[0].data.shape != (cfg.height, cfg.width):
        raise ValueError(
            f"source frames are {frames[0].width}x{frames[0].height}, config expects {cfg.width}x{cfg.height}"
        )
    stamps = np.array([f.timestamp for f in frames], dtype=np.int64)
    t0 = int(stamps[0])
    n_out = _frame_count(stamps, cfg)
    logger.info("CIS: %d source frames -> %d output frames", len(frames), n_out)
    threads = max(1, int(threads))
    bands = np.array_split(np.arange(cfg.height), min(threads, cfg.height))

    cov_hi = _coverage_end(stamps)
    out = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for i in range(n_out):
            start = round_half_up(t0 + i * cfg.frame_period)
            blurred = np.vstack(
                list(pool.map(lambda rows: _integrate_rows(frames, stamps, cov_hi, cfg, start, rows), bands))
            )
            out.append(apply_adc_noise(apply_operation_range(blurred, cfg), cfg, i, start))
    return out


class CisSensor(TransformerMixin, BaseEstimator):
    """Frame-sensor simulator with the scikit-learn transformer interface.

    ``fit`` resolves the configuration against the input geometry (width and
    height default to the frame shape); ``transform`` turns a high-rate
    :class:`IntensityFrame` sequence into a list of :class:`CisFrame`.
    """

    def __init__(
        self,
        fps=30.0,
        exposure_time=10000.0,
        line_readout_time=10.0,
        min_illuminance=4096.0,
        slope=55.0,
        noise_lsb=5.2,
        seed=0,
        width=None,
        height=None,
        n_jobs=1,
    ):
        self.fps = fps
        self.exposure_time = exposure_time
        self.line_readout_time = line_readout_time
        self.min_illuminance = min_illuminance
        self.slope = slope
        self.noise_lsb = noise_lsb
        self.seed = seed
        self.width = width
        self.height = height
        self.n_jobs = n_jobs

    @classmethod
    def from_config(cls, cfg: CisConfig, n_jobs: int = 1) -> "CisSensor":
        return cls(**dataclasses.asdict(cfg), n_jobs=n_jobs)

    def fit(self, X, y=None):
        frames = check_frames(X, min_frames=1)
        height, width = frames[0].data.shape
        params = {k: v for k, v in self.get_params().items() if k != "n_jobs"}
        params["width"] = width if self.width is None else self.width
        params["height"] = height if self.height is None else self.height
        self.config_ = CisConfig(**params)
        self.frame_shape_ = (self.config_.height, self.config_.width)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        frames = check_frames(X, shape=self.frame_shape_)
        return simulate_cis(frames, self.config_, threads=self.n_jobs)
