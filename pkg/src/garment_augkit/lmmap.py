"""Landmark re-localization in elastically warped images.

The warp is a backward map, so a landmark ``(x_k, y_k)`` of the input image has
no closed-form position in the output.  We collect the ``n`` output pixels whose
source column is closest to ``x_k`` and, separately, the ``n`` whose source row
is closest to ``y_k``.  A pixel present in both sets is the answer (found with a
hash lookup); otherwise the member of the column set with the nearest neighbour
in the row set is used (found with a 2-d kd-tree).

``oracle_invert`` is an exhaustive search kept independent of all of the above
and is only used for verification.

Ties are broken lexicographically on ``(y, x)``, i.e. in row-major pixel order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .core import InvalidParameterError, Landmark, LandmarkSet, Visibility
from .warp import DisplacementFieldPair

AXIS_X = "X"
AXIS_Y = "Y"

REJECT_THRESHOLD = 3.0
REFERENCE_N = 200
REFERENCE_SIZE = 224


def area_scaled_count(width: int, height: int) -> int:
    """200 candidates at 224x224, scaled with pixel count, never below 50."""
    return max(50, int(math.floor(REFERENCE_N * (width * height) / (REFERENCE_SIZE * REFERENCE_SIZE) + 0.5)))


def default_candidate_count(width: int, height: int) -> int:
    """The area-scaled count, raised to at least one full grid line.

    For a near-identity field every pixel of the closest column has almost the
    same x residual.  A set smaller than that column keeps only part of it, and
    the x and y sets can then miss each other entirely.
    """
    return max(area_scaled_count(width, height), width, height)


@dataclass(frozen=True)
class CandidateSet:
    axis: str
    xs: np.ndarray
    ys: np.ndarray
    residuals: np.ndarray

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.xs.tolist(), self.ys.tolist()))

    def residual_map(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.entries, self.residuals.tolist()))

    @classmethod
    def from_entries(cls, axis: str, entries: Iterable[tuple[int, int]], residuals=None) -> "CandidateSet":
        entries = list(entries)
        xs = np.array([e[0] for e in entries], dtype=np.int64)
        ys = np.array([e[1] for e in entries], dtype=np.int64)
        res = np.zeros(len(entries)) if residuals is None else np.asarray(residuals, dtype=np.float64)
        return cls(axis, xs, ys, res)


def axis_residuals(fields: DisplacementFieldPair, target: float, axis: str) -> np.ndarray:
    """|xt + dx - target| (axis X) or |yt + dy - target| (axis Y) over the whole grid."""
    if axis == AXIS_X:
        return np.abs(np.arange(fields.width, dtype=np.float64)[None, :] + fields.dx - target)
    if axis == AXIS_Y:
        return np.abs(np.arange(fields.height, dtype=np.float64)[:, None] + fields.dy - target)
    raise InvalidParameterError(f"axis must be 'X' or 'Y', got {axis!r}")


def candidate_set(fields: DisplacementFieldPair, target: float, axis: str, n: int) -> CandidateSet:
    """The ``n`` pixels with the smallest residual on one axis, ascending, ties in row-major order."""
    if n < 1:
        raise InvalidParameterError("candidate count must be at least 1")
    res = axis_residuals(fields, target, axis).ravel()
    total = res.size
    n = min(n, total)
    if n < total:
        kth = np.partition(res, n - 1)[n - 1]
        below = np.flatnonzero(res < kth)
        at = np.flatnonzero(res == kth)[: n - below.size]
        idx = np.concatenate([below, at])
    else:
        idx = np.arange(total)
    # lexsort: last key is primary; flat index order is (y, x) order
    idx = idx[np.lexsort((idx, res[idx]))]
    ys, xs = np.divmod(idx, fields.width)
    return CandidateSet(axis, xs.astype(np.int64), ys.astype(np.int64), res[idx])


def match_exact(xs: CandidateSet, ys: CandidateSet) -> Optional[tuple[int, int]]:
    """A pixel present in both sets, via a hash table over ``ys``.

    With several shared pixels the smallest residual sum wins, then row-major order.
    """
    table = ys.residual_map()
    best = None
    for (x, y), rx in zip(xs.entries, xs.residuals.tolist()):
        ry = table.get((x, y))
        if ry is None:
            continue
        key = (rx + ry, y, x)
        if best is None or key < best:
            best = key
    return None if best is None else (best[2], best[1])


class KdTree2:
    """Static 2-d kd-tree over integer points with exact nearest-neighbour queries.

    Built once by median splits on alternating axes and stored in flat arrays
    (implicit binary layout over a permuted point list).  ``nearest`` returns the
    point minimizing ``(squared distance, y, x)``, so results are identical to a
    linear scan with the same ordering.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        if len(pts) == 0:
            raise InvalidParameterError("kd-tree needs at least one point")
        self.points = pts
        self._order = np.arange(len(pts))
        self._build(0, len(pts), 0)
        self._pts = [tuple(p) for p in pts[self._order].tolist()]

    def _build(self, lo: int, hi: int, depth: int) -> None:
        if hi - lo <= 1:
            return
        axis = depth % 2
        seg = self._order[lo:hi]
        mid = (hi - lo) // 2
        part = np.argpartition(self.points[seg, axis], mid)
        self._order[lo:hi] = seg[part]
        m = lo + mid
        self._build(lo, m, depth + 1)
        self._build(m + 1, hi, depth + 1)

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, q) -> tuple[tuple[int, int], int]:
        """(point, squared distance) of the nearest point to ``q``."""
        qx, qy = int(q[0]), int(q[1])
        best = [None]  # (d2, y, x)
        pts = self._pts

        def visit(lo: int, hi: int, depth: int) -> None:
            if lo >= hi:
                return
            m = lo + (hi - lo) // 2
            px, py = pts[m]
            key = ((px - qx) ** 2 + (py - qy) ** 2, py, px)
            if best[0] is None or key < best[0]:
                best[0] = key
            if hi - lo == 1:
                return
            diff = (qx - px) if depth % 2 == 0 else (qy - py)
            near, far = ((lo, m), (m + 1, hi)) if diff < 0 else ((m + 1, hi), (lo, m))
            visit(near[0], near[1], depth + 1)
            # <= keeps equal-distance candidates reachable for the tie rule
            if diff * diff <= best[0][0]:
                visit(far[0], far[1], depth + 1)

        visit(0, len(pts), 0)
        d2, y, x = best[0]
        return (x, y), d2


def linear_nearest(points, q) -> tuple[tuple[int, int], int]:
    """Reference nearest neighbour by linear scan, same ordering as ``KdTree2.nearest``."""
    best = None
    for px, py in points:
        key = ((px - q[0]) ** 2 + (py - q[1]) ** 2, py, px)
        if best is None or key < best:
            best = key
    return (best[2], best[1]), best[0]


class NearestMatch(NamedTuple):
    point: tuple[int, int]
    neighbor: tuple[int, int]
    distance: float


def match_nearest(xs: CandidateSet, ys: CandidateSet) -> NearestMatch:
    """The ``xs`` member whose nearest ``ys`` neighbour is closest."""
    tree = KdTree2(np.stack([ys.xs, ys.ys], axis=1))
    best = None
    for x, y in xs.entries:
        nb, d2 = tree.nearest((x, y))
        key = (d2, y, x)
        if best is None or key < best[0]:
            best = (key, (x, y), nb)
    (d2, _, _), point, nb = best
    return NearestMatch(point, nb, math.sqrt(d2))


def combined_residual(fields: DisplacementFieldPair, x: int, y: int, lm: Landmark) -> float:
    return math.hypot(x + fields.dx[y, x] - lm.x, y + fields.dy[y, x] - lm.y)


def invert_landmark(fields: DisplacementFieldPair, lm: Landmark, n: Optional[int] = None,
                    reject: float = REJECT_THRESHOLD) -> Landmark:
    if n is None:
        n = default_candidate_count(fields.width, fields.height)
    cx = candidate_set(fields, lm.x, AXIS_X, n)
    cy = candidate_set(fields, lm.y, AXIS_Y, n)
    hit = match_exact(cx, cy)
    x, y = hit if hit is not None else match_nearest(cx, cy).point
    vis = lm.visibility
    if combined_residual(fields, x, y, lm) > reject:
        vis = Visibility.OUT_OF_FRAME
    return Landmark(float(x), float(y), vis)


def invert_landmarks(fields: DisplacementFieldPair, lms: LandmarkSet, n: Optional[int] = None,
                     reject: float = REJECT_THRESHOLD) -> LandmarkSet:
    """Invert every in-frame landmark; out-of-frame ones are passed through untouched."""
    return lms.map(lambda lm: invert_landmark(fields, lm, n, reject) if lm.in_frame else lm)


def oracle_invert(fields: DisplacementFieldPair, lm: Landmark) -> Landmark:
    """Exhaustive argmin of the squared source-position error over every pixel."""
    h, w = fields.height, fields.width
    best = None
    for y in range(h):
        ex = np.arange(w) + fields.dx[y] - lm.x
        ey = y + fields.dy[y] - lm.y
        err = ex * ex + ey * ey
        x = int(np.argmin(err))  # first minimum = smallest x in this row
        if best is None or err[x] < best[0]:
            best = (float(err[x]), y, x)
    return Landmark(float(best[2]), float(best[1]), lm.visibility)


