"""Geometric image transforms: bilinear sampling, Gaussian kernels, rotation and elastic warping.

All warps are backward mappings: every output pixel ``(xt, yt)`` looks up a
source position in the input image and samples it bilinearly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    Image,
    InvalidCoordinateError,
    InvalidParameterError,
    LandmarkSet,
    Landmark,
    RngStream,
    ShapeError,
    Visibility,
    uniform,
)

UNIT_PEAK = "unit-peak"
UNIT_SUM = "unit-sum"


class TooManySeedsError(InvalidParameterError):
    pass


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    radius: int
    weights: np.ndarray
    normalization: str


@dataclass(frozen=True)
class ElasticParams:
    n_s: int = 3
    alpha: float = 500.0
    sigma: float = 40.0
    truncation: float = 3.0

    def __post_init__(self):
        if self.n_s < 0 or self.alpha < 0 or not self.sigma > 0 or not self.truncation > 0:
            raise InvalidParameterError(f"invalid elastic parameters {self}")


@dataclass(frozen=True)
class DisplacementFieldPair:
    """Per-pixel source offsets; ``dx[yt, xt]`` is added to ``xt`` to find the source column."""

    dx: np.ndarray
    dy: np.ndarray
    stage: str = "smoothed"

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ShapeError("dx and dy must be equally shaped 2-D fields")
        if self.stage not in ("sparse", "smoothed"):
            raise InvalidParameterError(f"unknown field stage {self.stage!r}")

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @classmethod
    def zeros(cls, width: int, height: int) -> "DisplacementFieldPair":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, width: int, height: int, dx: float, dy: float) -> "DisplacementFieldPair":
        return cls(np.full((height, width), float(dx)), np.full((height, width), float(dy)))

    def max_abs(self) -> float:
        return float(max(np.abs(self.dx).max(initial=0.0), np.abs(self.dy).max(initial=0.0)))


# ---------------------------------------------------------------------------
# sampling


def _bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``data`` (H, W, C) at coordinates already clamped to the pixel grid."""
    h, w = data.shape[:2]
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1.0 - fx) * data[y0, x0] + fx * data[y0, x1]
    bottom = (1.0 - fx) * data[y1, x0] + fx * data[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def bilinear_sample(img: Image, x: float, y: float) -> np.ndarray:
    """Per-channel intensity at real position ``(x, y)``, border-replicated outside the grid."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidCoordinateError(f"non-finite sample position ({x}, {y})")
    xs = np.clip(np.array([x], dtype=np.float64), 0.0, img.width - 1)
    ys = np.clip(np.array([y], dtype=np.float64), 0.0, img.height - 1)
    return _bilinear(img.data, xs, ys)[0]


def remap(img: Image, src_x: np.ndarray, src_y: np.ndarray, fill: Optional[Sequence[float]] = None) -> np.ndarray:
    """Backward-map ``img`` through per-pixel source coordinates.

    With ``fill=None`` sources are clamped to the border.  Otherwise a sample
    whose source lies more than half a pixel outside the grid takes ``fill``.
    """
    if not (np.all(np.isfinite(src_x)) and np.all(np.isfinite(src_y))):
        raise InvalidCoordinateError("non-finite source coordinates")
    w, h = img.width, img.height
    out = _bilinear(img.data, np.clip(src_x, 0.0, w - 1), np.clip(src_y, 0.0, h - 1))
    if fill is not None:
        fill_arr = np.broadcast_to(np.asarray(fill, dtype=np.float64), (img.channels,))
        outside = (src_x < -0.5) | (src_x > w - 0.5) | (src_y < -0.5) | (src_y > h - 0.5)
        out[outside] = fill_arr
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# gaussian smoothing and displacement fields


def gaussian_kernel(sigma: float, truncation: float = 3.0, normalization: str = UNIT_PEAK) -> GaussianKernel:
    if not sigma > 0 or not truncation > 0:
        raise InvalidParameterError(f"sigma and truncation must be positive (got {sigma}, {truncation})")
    if normalization not in (UNIT_PEAK, UNIT_SUM):
        raise InvalidParameterError(f"unknown normalization {normalization!r}")
    radius = int(math.ceil(truncation * sigma))
    u = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(u * u) / (2.0 * sigma * sigma))
    # separable product keeps the weights exactly symmetric and the centre exactly 1
    weights = np.outer(g, g)
    if normalization == UNIT_SUM:
        weights = weights / weights.sum()
    weights.setflags(write=False)
    return GaussianKernel(float(sigma), radius, weights, normalization)


def sparse_displacement_fields(width: int, height: int, p: ElasticParams, rng: RngStream) -> DisplacementFieldPair:
    """Seed ``p.n_s`` distinct pixels with offsets drawn from U(-alpha, alpha); zeros elsewhere."""
    if width < 1 or height < 1:
        raise InvalidParameterError("field dimensions must be positive")
    if p.n_s > width * height:
        raise TooManySeedsError(f"n_S={p.n_s} exceeds the {width * height} available pixels")
    dx = np.zeros((height, width))
    dy = np.zeros((height, width))
    if p.n_s:
        flat = rng.choice_without_replacement(width * height, p.n_s)
        for idx in flat:
            r, c = divmod(int(idx), width)
            dx[r, c] = uniform(rng, -p.alpha, p.alpha)
            dy[r, c] = uniform(rng, -p.alpha, p.alpha)
    return DisplacementFieldPair(dx, dy, stage="sparse")


def convolve_sparse(field: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    """Zero-padded convolution of a mostly-zero field, by stamping the kernel at each nonzero.

    Exact for any field; cost scales with the number of nonzero entries.
    """
    h, w = field.shape
    r = kernel.radius
    out = np.zeros((h, w))
    rows, cols = np.nonzero(field)
    for y, x in zip(rows, cols):
        y0, y1 = max(0, y - r), min(h, y + r + 1)
        x0, x1 = max(0, x - r), min(w, x + r + 1)
        out[y0:y1, x0:x1] += field[y, x] * kernel.weights[y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r]
    return out


def smooth_fields(sparse: DisplacementFieldPair, kernel: GaussianKernel) -> DisplacementFieldPair:
    return DisplacementFieldPair(convolve_sparse(sparse.dx, kernel), convolve_sparse(sparse.dy, kernel), "smoothed")


def make_displacement_fields(width: int, height: int, p: ElasticParams, rng: RngStream) -> DisplacementFieldPair:
    sparse = sparse_displacement_fields(width, height, p, rng)
    return smooth_fields(sparse, gaussian_kernel(p.sigma, p.truncation, UNIT_PEAK))


def warp_image(img: Image, fields: DisplacementFieldPair) -> Image:
    """Resample ``img`` so that output (xt, yt) reads input (xt + dx, yt + dy), border-clamped."""
    if (fields.width, fields.height) != (img.width, img.height):
        raise ShapeError("displacement fields do not match the image size")
    yt, xt = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    return Image(remap(img, xt + fields.dx, yt + fields.dy))


def elastic_warp(img: Image, lms: LandmarkSet, p: ElasticParams, rng: RngStream,
                 n: Optional[int] = None) -> tuple[Image, LandmarkSet, DisplacementFieldPair]:
    """Random elastic warp of an image together with its landmarks.

    Returns the warped image, the re-located landmarks and the smoothed fields
    (kept so callers can audit the landmark inversion).  ``n`` is the candidate
    count for landmark inversion; ``None`` selects the size-scaled default.
    """
    from .lmmap import invert_landmarks

    fields = make_displacement_fields(img.width, img.height, p, rng)
    if not fields.dx.any() and not fields.dy.any():
        return img, lms, fields
    return warp_image(img, fields), invert_landmarks(fields, lms, n), fields


# ---------------------------------------------------------------------------
# rotation


def _exact_trig(theta: float) -> tuple[float, float]:
    """cos/sin with quarter-turn values snapped so 90-degree rotations stay on the grid."""
    c, s = math.cos(theta), math.sin(theta)
    snap = lambda v: float(round(v)) if abs(v - round(v)) < 1e-12 else v  # noqa: E731
    return snap(c), snap(s)


def canvas_center(width: int, height: int) -> tuple[float, float]:
    return ((width - 1) / 2.0, (height - 1) / 2.0)


def rotate_image(img: Image, theta: float, fill: Sequence[float] | float = 0.0) -> Image:
    if not math.isfinite(theta):
        raise InvalidParameterError("rotation angle must be finite")
    c, s = _exact_trig(theta)
    cx, cy = canvas_center(img.width, img.height)
    yt, xt = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    u, v = xt - cx, yt - cy
    # inverse map: rotate output positions by -theta
    src_x = c * u + s * v + cx
    src_y = -s * u + c * v + cy
    return Image(remap(img, src_x, src_y, fill=np.atleast_1d(fill)))


def rotate_point(x: float, y: float, theta: float, center: tuple[float, float]) -> tuple[float, float]:
    c, s = _exact_trig(theta)
    u, v = x - center[0], y - center[1]
    return c * u - s * v + center[0], s * u + c * v + center[1]


def rotate_landmarks(lms: LandmarkSet, theta: float, center: tuple[float, float],
                     bounds: tuple[int, int]) -> LandmarkSet:
    """Forward-rotate every landmark; the ones leaving ``bounds`` (w, h) are flagged out-of-frame."""
    if not math.isfinite(theta):
        raise InvalidParameterError("rotation angle must be finite")
    w, h = bounds

    def rot(lm: Landmark) -> Landmark:
        x, y = rotate_point(lm.x, lm.y, theta, center)
        moved = Landmark(x, y, lm.visibility)
        if moved.in_frame and not moved.inside(w, h):
            moved = replace(moved, visibility=Visibility.OUT_OF_FRAME)
        return moved

    return lms.map(rot)


def random_rotation(img: Image, lms: LandmarkSet, rng: RngStream, lo: float = 0.0, hi: float = 2 * math.pi,
                    fill: Sequence[float] | float = 0.0) -> tuple[Image, LandmarkSet, float]:
    theta = uniform(rng, lo, hi)
    out = rotate_image(img, theta, fill)
    return out, rotate_landmarks(lms, theta, canvas_center(img.width, img.height), (img.width, img.height)), theta
