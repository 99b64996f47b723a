"""Frame (CIS) and event (DVS) sensor simulation with image-quality metrics."""

__version__ = "0.1.0"

from .cis import CisSensor, simulate_cis
from .dvs import DvsSensor, simulate_dvs
from .metrics import patch_min, psnr, sequence_report, ssim
from .patterns import PatternSpec, generate
from .types import (
    CisConfig,
    CisFrame,
    ConfigError,
    CoverageError,
    DvsConfig,
    Event,
    EventFrame,
    IntensityFrame,
    QualityReport,
)

__all__ = [
    "CisConfig",
    "CisFrame",
    "CisSensor",
    "ConfigError",
    "CoverageError",
    "DvsConfig",
    "DvsSensor",
    "Event",
    "EventFrame",
    "IntensityFrame",
    "PatternSpec",
    "QualityReport",
    "generate",
    "patch_min",
    "psnr",
    "sequence_report",
    "simulate_cis",
    "simulate_dvs",
    "ssim",
]
