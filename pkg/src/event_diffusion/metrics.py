"""Evaluation metrics: event-consistency rate and per-frame PSNR."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .events import EventStack, FrameSequence
from .guidance import event_distance


def consistency_rate(
    frames: FrameSequence, stacks: Sequence[EventStack], theta: float
) -> float:
    """Fraction of residual entries inside the +-2*theta feasibility band,
    over all consecutive frame pairs. stacks[0] is ignored (frame 0 has no
    predecessor)."""
    if len(stacks) != frames.n_frames:
        raise InvalidInputError(
            f"expected {frames.n_frames} stacks, got {len(stacks)}"
        )
    total = 0
    inside = 0
    for t in range(1, frames.n_frames):
        d = event_distance(
            frames.data[t], frames.data[t - 1], stacks[t], theta, frames.log_floor
        ).values
        inside += int(np.count_nonzero(np.abs(d) <= 2.0 * theta))
        total += d.size
    return inside / total


def psnr(a: FrameSequence, b: FrameSequence) -> np.ndarray:
    """Per-frame 10*log10(1/MSE) in dB against a unit peak; returns inf for
    identical frames."""
    if a.data.shape != b.data.shape:
        raise InvalidInputError(
            f"frame shape mismatch: {a.data.shape} vs {b.data.shape}"
        )
    diff = a.data - b.data
    mse = np.mean(diff * diff, axis=(1, 2, 3))
    out = np.full(a.n_frames, np.inf)
    nz = mse > 0
    out[nz] = 10.0 * np.log10(1.0 / mse[nz])
    return out
