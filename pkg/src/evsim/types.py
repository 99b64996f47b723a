"""Shared data model: frames, events, sensor configs and per-pixel state."""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "ConfigError",
    "CoverageError",
    "IntensityFrame",
    "Event",
    "EVENT_DTYPE",
    "EventFrame",
    "CisFrame",
    "CisConfig",
    "DvsConfig",
    "PixelState",
    "QualityReport",
    "NORMAL",
    "HOT",
    "COLD",
    "NEVER",
    "round_half_up",
]

NORMAL, HOT, COLD = 0, 1, 2
NEVER = -1  # last_event_t sentinel; real timestamps are >= 0

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<i4"), ("y", "<i4"), ("p", "i1")])


class ConfigError(ValueError):
    """Invalid or incomplete configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class CoverageError(ValueError):
    """Source frames do not cover a requested time span."""

    def __init__(self, message: str, span=None):
        super().__init__(message)
        self.span = span


def round_half_up(t):
    """Round real microseconds to integers, ties toward +inf."""
    r = np.floor(np.asarray(t, dtype=np.float64) + 0.5).astype(np.int64)
    return int(r) if r.ndim == 0 else r


@dataclass(frozen=True, eq=False)
class IntensityFrame:
    """A timestamped grid of linear intensities, shape ``(height, width)``."""

    timestamp: int
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"frame data must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("intensities must be finite and non-negative")
        if int(self.timestamp) != self.timestamp or self.timestamp < 0:
            raise ValueError(f"timestamp must be a non-negative integer, got {self.timestamp!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "timestamp", int(self.timestamp))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, IntensityFrame):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(self.data, other.data)


class Event(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True, eq=False)
class EventFrame:
    """Fixed-rate snapshot: one value in {-1, 0, +1} per pixel."""

    timestamp: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.int8)
        if data.ndim != 2 or not np.isin(data, (-1, 0, 1)).all():
            raise ValueError("event frame must be a 2-D grid of -1/0/+1")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class CisFrame:
    """Degraded frame of 10-bit digital numbers."""

    timestamp: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.uint16)
        if data.size and data.max() > 1023:
            raise ValueError("CIS values must lie in [0, 1023]")
        object.__setattr__(self, "data", data)


# --------------------------------------------------------------------------
# configs


_MODE_RE = re.compile(r"^\s*(free_running|fixed_rate\(\s*([0-9.eE+-]+)\s*\))\s*$")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _parse_value(key: str, kind: str, text: str):
    text = text.strip()
    try:
        if kind == "int":
            return int(text, 0)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "tuple":
            return tuple(float(p) for p in text.split(",") if p.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}", key) from None


def _field_kind(f: dataclasses.Field) -> str:
    ann = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    for kind in ("bool", "int", "float", "tuple", "str"):
        if ann.startswith(kind) or ann.lower().startswith(kind):
            return kind
    raise TypeError(f"unsupported config field type {ann}")


def parse_key_values(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", key)
        out[key] = value
    return out


class _TextConfig:
    """Mixin giving frozen dataclasses the flat text serialization."""

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_mapping(cls, values: dict, *, allow_unknown: bool = False):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                if allow_unknown:
                    continue
                raise ConfigError(f"unknown config key {key!r}", key)
            kwargs[key] = _parse_value(key, _field_kind(fields[key]), raw) if isinstance(raw, str) else raw
        for name, f in fields.items():
            if (
                name not in kwargs
                and f.default is dataclasses.MISSING
                and f.default_factory is dataclasses.MISSING
            ):
                raise ConfigError(f"missing required config key {name!r}", name)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str):
        return cls.from_mapping(parse_key_values(text))

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format_value(getattr(self, f.name))}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CisConfig(_TextConfig):
    """Frame-sensor parameters; defaults follow the usual post-processing set."""

    width: int
    height: int
    fps: float
    exposure_time: float = 10000.0
    line_readout_time: float = 10.0
    min_illuminance: float = 4096.0
    slope: float = 55.0
    noise_lsb: float = 5.2
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("width and height must be positive", "width")
        if not self.fps > 0:
            raise ConfigError("fps must be positive", "fps")
        if self.exposure_time < 0:
            raise ConfigError("exposure_time must be >= 0", "exposure_time")
        if self.line_readout_time < 0:
            raise ConfigError("line_readout_time must be >= 0", "line_readout_time")
        if not self.slope > 0:
            raise ConfigError("slope must be positive", "slope")
        if self.noise_lsb < 0:
            raise ConfigError("noise_lsb must be >= 0", "noise_lsb")
        capture = self.exposure_time + self.height * self.line_readout_time
        if capture > self.frame_period + 1e-9:
            raise ConfigError(
                f"exposure_time + height * line_readout_time = {capture} us exceeds "
                f"the frame period {self.frame_period} us",
                "exposure_time",
            )

    @property
    def frame_period(self) -> float:
        return 1e6 / self.fps


@dataclass(frozen=True)
class DvsConfig(_TextConfig):
    """Event-sensor parameters; log-domain quantities use natural log."""

    width: int
    height: int
    threshold_pos: float
    threshold_neg: float
    mismatch_sigma: float = 0.015
    external_noise_sigma: float = 0.035
    inpixel_noise_sigma: float = 0.0
    refractory_us: float = 100.0
    bad_pixel_prob: float = 0.0
    lens_shading_coeffs: tuple = (1.0,)
    lpf_cutoff_hz: float = 300.0
    intensity_scaled_bandwidth: bool = False
    full_scale: float = 65535.0
    mode: str = "free_running"
    log_epsilon: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lens_shading_coeffs", tuple(float(c) for c in self.lens_shading_coeffs))
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("width and height must be positive", "width")
        for key in ("threshold_pos", "threshold_neg", "lpf_cutoff_hz", "log_epsilon", "full_scale"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive", key)
        for key in ("mismatch_sigma", "external_noise_sigma", "inpixel_noise_sigma", "refractory_us"):
            if not getattr(self, key) >= 0:
                raise ConfigError(f"{key} must be >= 0", key)
        if not 0.0 <= self.bad_pixel_prob <= 1.0:
            raise ConfigError("bad_pixel_prob must lie in [0, 1]", "bad_pixel_prob")
        if not self.lens_shading_coeffs:
            raise ConfigError("lens_shading_coeffs must not be empty", "lens_shading_coeffs")
        m = _MODE_RE.match(self.mode)
        if m is None:
            raise ConfigError(f"mode must be free_running or fixed_rate(<fps>), got {self.mode!r}", "mode")
        if m.group(2) is not None:
            fps = float(m.group(2))
            if not (fps > 0 and math.isfinite(fps)):
                raise ConfigError("fixed_rate event fps must be positive", "mode")
            object.__setattr__(self, "mode", f"fixed_rate({m.group(2)})")
        else:
            object.__setattr__(self, "mode", "free_running")

    @property
    def fixed_rate(self) -> bool:
        return self.mode != "free_running"

    @property
    def event_fps(self) -> Optional[float]:
        m = _MODE_RE.match(self.mode)
        return float(m.group(2)) if m.group(2) is not None else None


@dataclass
class PixelState:
    """Per-pixel simulation memory, stored as flat arrays (one entry per pixel).

    ``pending_noise`` holds the noise draw for the next threshold level and
    ``noise_draws`` counts draws so far; both are redrawn/advanced whenever a
    level is crossed.
    """

    ref_log: np.ndarray
    lpf_state1: np.ndarray
    lpf_state2: np.ndarray
    threshold_offset: np.ndarray
    last_event_t: np.ndarray
    fault: np.ndarray
    pending_noise: np.ndarray = field(default=None)
    noise_draws: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.ref_log.shape[0]
        if self.pending_noise is None:
            self.pending_noise = np.zeros(n)
        if self.noise_draws is None:
            self.noise_draws = np.zeros(n, dtype=np.uint64)


@dataclass(frozen=True)
class QualityReport:
    mean_ssim: float
    min_ssim: float
    std_ssim: float
    mean_psnr: float
    min_psnr: float
    std_psnr: float
    min_patch_ssim: float
    min_patch_psnr: float
    per_frame: tuple  # of (frame index, ssim, psnr)
