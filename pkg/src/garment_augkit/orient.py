"""Forward passes of the rotation-invariant encoder pieces and the attention branch.

Oriented tensors are numpy arrays of shape ``(H, W, groups, N)``.  Filter banks
follow the active-rotating-filter layout ``(n_out, n_in, N, k, k)``: every
materialized filter also spans the N input orientation channels, and its
``j``-th copy is the filter rotated by ``j`` quarter turns with the orientation
axis rolled by ``j``.  Only N = 4 is supported, so every rotation is an exact
index permutation.

Nothing here is trained; weights are passed in or drawn from a seeded stream.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .core import AugkitError, InvalidParameterError, RngStream, ShapeError

N_ORIENTATIONS = 4


class UnsupportedOrientationCount(AugkitError, ValueError):
    pass


@dataclass(frozen=True)
class OrientedTensor:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4:
            raise ShapeError(f"oriented tensor must be (H, W, groups, N), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def groups(self) -> int:
        return self.values.shape[2]

    @property
    def n_orientations(self) -> int:
        return self.values.shape[3]

    def flat(self) -> np.ndarray:
        """(H, W, groups * N) view, orientation fastest."""
        return self.values.reshape(self.height, self.width, -1)

    def rot90(self, j: int = 1) -> "OrientedTensor":
        """Spatial quarter-turn rotation (counter-clockwise) plus cyclic orientation shift."""
        v = np.rot90(self.values, j, axes=(0, 1))
        return OrientedTensor(np.roll(v, j, axis=3))

    def shift_orientations(self, s: int) -> "OrientedTensor":
        return OrientedTensor(np.roll(self.values, s, axis=3))


@dataclass(frozen=True)
class RotatingFilterBank:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 5 or w.shape[3] != w.shape[4]:
            raise ShapeError(f"filter bank must be (n_out, n_in, N, k, k), got {w.shape}")
        if w.shape[2] != N_ORIENTATIONS:
            raise UnsupportedOrientationCount(f"only N={N_ORIENTATIONS} orientations are supported")
        object.__setattr__(self, "weights", w)

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_orientations(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[3]

    @classmethod
    def random(cls, n_out: int, n_in: int, k: int, rng: RngStream, scale: float = 1.0) -> "RotatingFilterBank":
        return cls(scale * rng.generator.standard_normal((n_out, n_in, N_ORIENTATIONS, k, k)))


def rotate_kernel(kernel: np.ndarray, j: int) -> np.ndarray:
    """Rotate the trailing two axes by ``j`` quarter turns counter-clockwise."""
    return np.rot90(kernel, j, axes=(-2, -1))


def arf_expand(bank: RotatingFilterBank, j: int) -> np.ndarray:
    """The ``j``-th rotated copy of every filter in ``bank``."""
    n = bank.n_orientations
    if n != N_ORIENTATIONS:
        raise UnsupportedOrientationCount(f"only N={N_ORIENTATIONS} orientations are supported")
    if not 0 <= j < n:
        raise InvalidParameterError(f"orientation index {j} outside [0, {n})")
    return np.ascontiguousarray(np.roll(rotate_kernel(bank.weights, j), j, axis=2))


def orconv_forward(x: OrientedTensor, bank: RotatingFilterBank) -> OrientedTensor:
    """Oriented convolution with zero "same" padding.

    Output orientation ``j`` cross-correlates the input with the ``j``-th filter copy,
    summed over input groups and input orientations.
    """
    if x.n_orientations != bank.n_orientations:
        raise ShapeError(f"input has {x.n_orientations} orientations, bank has {bank.n_orientations}")
    if x.groups != bank.n_in:
        raise ShapeError(f"input has {x.groups} groups, bank expects {bank.n_in}")
    k = bank.kernel_size
    if k % 2 == 0:
        raise ShapeError("kernel size must be odd for same padding")
    p = k // 2
    padded = np.pad(x.values, ((p, p), (p, p), (0, 0), (0, 0)))
    # (H, W, n_in, N, k, k)
    windows = sliding_window_view(padded, (k, k), axis=(0, 1))
    out = np.empty((x.height, x.width, bank.n_out, bank.n_orientations))
    for j in range(bank.n_orientations):
        out[..., j] = np.einsum("hwimab,oimab->hwo", windows, arf_expand(bank, j), optimize=True)
    return OrientedTensor(out)


def s_oralign(x: OrientedTensor) -> tuple[np.ndarray, np.ndarray]:
    """Squeeze, find each group's dominant orientation, spin it to the front.

    Returns the aligned features flattened to ``(H, W, groups * N)`` and the
    per-group main orientation (ties resolve to the lowest index).
    """
    pooled = x.values.mean(axis=(0, 1))
    main = np.argmax(pooled, axis=1)
    n = x.n_orientations
    gather = (np.arange(n)[None, :] + main[:, None]) % n
    aligned = np.take_along_axis(x.values, gather[None, None, :, :], axis=3)
    return aligned.reshape(x.height, x.width, -1), main


# ---------------------------------------------------------------------------
# attention


@dataclass(frozen=True)
class ChannelAttentionWeights:
    """Bottleneck weights: ``w1`` is (C/r, C), ``w2`` is (C, C/r)."""

    w1: np.ndarray
    w2: np.ndarray
    r: int = 16

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        c = w1.shape[1] if w1.ndim == 2 else -1
        if c <= 0 or c % self.r:
            raise ShapeError(f"channel count {c} must be a positive multiple of r={self.r}")
        if w1.shape != (c // self.r, c) or w2.shape != (c, c // self.r):
            raise ShapeError(f"bad bottleneck shapes {w1.shape} and {w2.shape} for C={c}, r={self.r}")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def random(cls, channels: int, rng: RngStream, r: int = 16, scale: float = 0.1) -> "ChannelAttentionWeights":
        g = rng.generator
        return cls(scale * g.standard_normal((channels // r, channels)),
                   scale * g.standard_normal((channels, channels // r)), r)


def channel_squeeze(features: np.ndarray, expected_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Per-channel spatial mean of an (H, W, C) map."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeError(f"feature map must be (H, W, C), got {f.shape}")
    if expected_hw is not None and f.shape[:2] != tuple(expected_hw):
        raise ShapeError(f"feature map is {f.shape[:2]}, expected {tuple(expected_hw)}")
    return f.mean(axis=(0, 1))


def channel_excite(squeezed: np.ndarray, w: ChannelAttentionWeights) -> np.ndarray:
    s = np.asarray(squeezed, dtype=np.float64)
    if s.shape != (w.channels,):
        raise ShapeError(f"descriptor of shape {s.shape} does not match {w.channels} channels")
    hidden = np.maximum(w.w1 @ s, 0.0)
    return expit(w.w2 @ hidden)


def factorize_attention(spatial_landmark: np.ndarray, spatial_category: np.ndarray, channel: np.ndarray,
                        mix: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Combine landmark, category and channel attention into a map in [-1, 1].

    ``(A_L + A_C) * A_ch`` per pixel and channel, then a 1x1 channel mix
    ``out[c] = sum_c' mix[c, c'] * in[c'] + bias[c]``, then tanh.
    """
    al = np.asarray(spatial_landmark, dtype=np.float64)
    ac = np.asarray(spatial_category, dtype=np.float64)
    ch = np.asarray(channel, dtype=np.float64)
    mix = np.asarray(mix, dtype=np.float64)
    if ac.ndim != 3 or al.shape != ac.shape[:2]:
        raise ShapeError(f"landmark attention {al.shape} must match the spatial extent of {ac.shape}")
    c = ac.shape[2]
    if ch.shape != (c,) or mix.shape != (c, c):
        raise ShapeError(f"channel weights {ch.shape} / mixer {mix.shape} do not fit {c} channels")
    bias = np.zeros(c) if bias is None else np.asarray(bias, dtype=np.float64)
    if bias.shape != (c,):
        raise ShapeError(f"bias shape {bias.shape} does not fit {c} channels")
    combined = (al[:, :, None] + ac) * ch[None, None, :]
    return np.tanh(combined @ mix.T + bias)


def modulate_features(features: np.ndarray, attention: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    a = np.asarray(attention, dtype=np.float64)
    if f.shape != a.shape:
        raise ShapeError(f"features {f.shape} and attention {a.shape} differ in shape")
    return (1.0 + a) * f


# ---------------------------------------------------------------------------
# weight files: one ASCII header line with the shape, then little-endian float64 data


def dump_weights(array: np.ndarray) -> bytes:
    a = np.asarray(array, dtype="<f8")
    header = " ".join(str(d) for d in a.shape) + "\n"
    return header.encode("ascii") + np.ascontiguousarray(a).tobytes()


def parse_weights(blob: bytes) -> np.ndarray:
    nl = blob.find(b"\n")
    if nl < 0:
        raise ShapeError("weight file has no header line")
    shape = tuple(int(t) for t in blob[:nl].decode("ascii").split())
    data = np.frombuffer(blob[nl + 1:], dtype="<f8")
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"weight file holds {data.size} values, header declares shape {shape}")
    return data.reshape(shape).astype(np.float64)


def save_weights(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_weights(array))


def load_weights(path: str | os.PathLike | io.BufferedIOBase) -> np.ndarray:
    if hasattr(path, "read"):
        return parse_weights(path.read())
    with open(path, "rb") as fh:
        return parse_weights(fh.read())
