"""Input checks shared by the simulators, estimators and metrics."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .types import IntensityFrame

__all__ = ["check_frames", "check_image_pair"]


def check_frames(X, *, min_frames: int = 0, shape=None) -> list:
    """Validate a frame sequence and return it as a list of IntensityFrame.

    ``X`` is either a sequence of :class:`IntensityFrame` or a pair
    ``(stack, timestamps)`` with ``stack`` shaped ``(n, height, width)``.
    Timestamps must be strictly increasing and all frames the same shape.
    """
    if isinstance(X, tuple) and len(X) == 2 and isinstance(X[0], np.ndarray):
        stack, stamps = X
        if stack.ndim != 3 or len(stamps) != stack.shape[0]:
            raise ValueError("expected (stack[n, h, w], timestamps[n])")
        frames = [IntensityFrame(int(t), d) for t, d in zip(stamps, stack)]
    else:
        frames = list(X)
        for f in frames:
            if not isinstance(f, IntensityFrame):
                raise TypeError(f"expected IntensityFrame, got {type(f).__name__}")
    if len(frames) < min_frames:
        raise ValueError(f"need at least {min_frames} frames, got {len(frames)}")
    if frames:
        ref_shape = frames[0].data.shape if shape is None else tuple(shape)
        for f in frames:
            if f.data.shape != ref_shape:
                raise ValueError(f"frame at t={f.timestamp} has shape {f.data.shape}, expected {ref_shape}")
    for a, b in zip(frames, frames[1:]):
        if b.timestamp <= a.timestamp:
            raise ValueError(f"timestamps must be strictly increasing ({a.timestamp} then {b.timestamp})")
    return frames


def check_image_pair(a, b) -> tuple:
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("images must be 2-D grayscale")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def check_sequences(seq_a: Sequence, seq_b: Sequence) -> None:
    if len(seq_a) != len(seq_b):
        raise ValueError(f"sequence length mismatch: {len(seq_a)} vs {len(seq_b)}")
