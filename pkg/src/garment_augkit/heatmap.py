"""Landmark heatmaps: Gaussian encoding, argmax decoding, the summed squared loss and pooled attention."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    N_LANDMARKS,
    InvalidParameterError,
    Landmark,
    LandmarkSet,
    RngStream,
    ShapeError,
    Visibility,
)

DEFAULT_SIGMA_H = 8.0
DEFAULT_ZERO_THRESHOLD = 1e-3


@dataclass(frozen=True)
class HeatmapStack:
    """``maps`` has shape (8, height, width) with values in [0, 1]."""

    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.float64)
        if m.ndim != 3 or m.shape[0] != N_LANDMARKS:
            raise ShapeError(f"heatmap stack must be (8, H, W), got {m.shape}")
        if m.size and (m.min() < 0.0 or m.max() > 1.0):
            raise InvalidParameterError("heatmap values must lie in [0, 1]")
        object.__setattr__(self, "maps", m)

    @property
    def height(self) -> int:
        return self.maps.shape[1]

    @property
    def width(self) -> int:
        return self.maps.shape[2]


def encode_heatmaps(lms: LandmarkSet, width: int, height: int, sigma_h: float = DEFAULT_SIGMA_H) -> HeatmapStack:
    if not sigma_h > 0:
        raise InvalidParameterError("sigma_h must be positive")
    maps = np.zeros((N_LANDMARKS, height, width))
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    for k, lm in lms.present():
        if not lm.in_frame:
            continue
        d2 = (xs - lm.x) ** 2 + (ys - lm.y) ** 2
        maps[k] = np.clip(np.exp(-d2 / (2.0 * sigma_h * sigma_h)), 0.0, 1.0)
    return HeatmapStack(maps)


def decode_heatmaps(hm: HeatmapStack, rng: RngStream, zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> LandmarkSet:
    """Per plane, the position of the maximum; ties are drawn uniformly with ``rng``.

    Planes whose maximum is below ``zero_threshold`` give an empty slot.
    """
    slots = []
    for plane in hm.maps:
        peak = plane.max()
        if peak < zero_threshold:
            slots.append(None)
            continue
        rows, cols = np.nonzero(plane == peak)
        j = 0 if len(rows) == 1 else int(rng.integers(0, len(rows)))
        slots.append(Landmark(float(cols[j]), float(rows[j]), Visibility.VISIBLE))
    return LandmarkSet(tuple(slots))


def _as_batch(stacks) -> np.ndarray:
    if isinstance(stacks, HeatmapStack):
        return stacks.maps[None]
    if isinstance(stacks, np.ndarray):
        return stacks if stacks.ndim == 4 else stacks[None]
    return np.stack([s.maps if isinstance(s, HeatmapStack) else np.asarray(s) for s in stacks])


def heatmap_loss(pred: Sequence[HeatmapStack], gt: Sequence[HeatmapStack]) -> float:
    """Sum of squared differences over samples, landmarks and pixels (not averaged)."""
    p, g = _as_batch(pred), _as_batch(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction batch {p.shape} does not match ground truth {g.shape}")
    diff = p - g
    return float(np.sum(diff * diff))


def landmark_attention(pred: HeatmapStack, factor: int = 8) -> np.ndarray:
    """Block-average each plane by ``factor``, then take the maximum over planes."""
    h, w = pred.height, pred.width
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"{h}x{w} heatmaps are not divisible by factor {factor}")
    pooled = pred.maps.reshape(N_LANDMARKS, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return pooled.max(axis=0)
