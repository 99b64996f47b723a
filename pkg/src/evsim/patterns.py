"""Analytic stimulus generator standing in for a renderer.

Every pattern is a closed-form function of (spec, frame index), so tests
and oracles can evaluate the same scene independently.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .types import ConfigError, IntensityFrame, _TextConfig, round_half_up

__all__ = ["KINDS", "PatternSpec", "frame_count", "frame_time", "pattern_frame", "generate"]

KINDS = ("constant", "horizontal_ramp", "moving_edge", "log_linear_ramp", "checkerboard", "flicker")


@dataclass(frozen=True)
class PatternSpec(_TextConfig):
    """Stimulus description.

    Kind-specific parameters: ``velocity`` (px/frame) for moving_edge and
    checkerboard scrolling, ``edge_start`` (column) for moving_edge, ``rate``
    (1/us, log-intensity slope) for log_linear_ramp, ``cell`` (px) for
    checkerboard, ``frequency`` (Hz) and ``depth`` for flicker.
    """

    kind: str
    width: int
    height: int
    fps: float = 960.0
    duration: float = 1_000_000.0
    base_intensity: float = 8192.0
    amplitude: float = 16384.0
    velocity: float = 1.0
    edge_start: float = 0.0
    rate: float = 1e-4
    cell: int = 8
    frequency: float = 10.0
    depth: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown pattern kind {self.kind!r}; expected one of {', '.join(KINDS)}", "kind")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("pattern width and height must be positive", "width")
        if not self.duration > 0:
            raise ConfigError("pattern duration must be positive", "duration")
        if not self.fps > 0:
            raise ConfigError("pattern fps must be positive", "fps")
        if self.base_intensity < 0 or self.amplitude < 0:
            raise ConfigError("intensities must be non-negative", "base_intensity")
        if self.cell <= 0:
            raise ConfigError("cell must be positive", "cell")
        if not 0.0 <= self.depth <= 1.0:
            raise ConfigError("depth must lie in [0, 1]", "depth")

    def with_params(self, **kw) -> "PatternSpec":
        return dataclasses.replace(self, **kw)


def frame_count(spec: PatternSpec) -> int:
    """Number of frames with timestamp below ``duration``."""
    rate = Fraction(spec.fps).limit_denominator(10**6)
    return max(1, math.ceil(Fraction(spec.duration).limit_denominator(10**6) * rate / 10**6))


def frame_time(spec: PatternSpec, k: int) -> int:
    return round_half_up(k * 1e6 / spec.fps)


def pattern_frame(spec: PatternSpec, k: int) -> np.ndarray:
    """Intensity grid of frame ``k``."""
    h, w = spec.height, spec.width
    t_us = frame_time(spec, k)
    x = np.arange(w, dtype=np.float64)[None, :]
    y = np.arange(h, dtype=np.float64)[:, None]
    base, amp = spec.base_intensity, spec.amplitude
    kind = spec.kind
    if kind == "constant":
        img = np.full((h, w), base)
    elif kind == "horizontal_ramp":
        img = base + amp * np.broadcast_to(x / max(w - 1, 1), (h, w))
    elif kind == "moving_edge":
        # columns left of the edge are bright
        edge = spec.edge_start + spec.velocity * k
        img = np.where(np.broadcast_to(x, (h, w)) < edge, base + amp, base)
    elif kind == "log_linear_ramp":
        img = np.full((h, w), base * math.exp(spec.rate * t_us))
    elif kind == "checkerboard":
        shift = spec.velocity * k
        parity = (np.floor((x + shift) / spec.cell) + np.floor(y / spec.cell)) % 2
        img = base + amp * parity
    elif kind == "flicker":
        img = np.full((h, w), base * (1.0 + spec.depth * math.sin(2.0 * math.pi * spec.frequency * t_us * 1e-6)))
    else:  # pragma: no cover - guarded in PatternSpec
        raise ConfigError(f"unknown pattern kind {kind!r}", "kind")
    return np.ascontiguousarray(img, dtype=np.float64)


def generate(spec: PatternSpec) -> list:
    """All frames of the pattern, at ``t_k = k * 1e6 / fps`` (rounded to us)."""
    return [IntensityFrame(frame_time(spec, k), pattern_frame(spec, k)) for k in range(frame_count(spec))]
