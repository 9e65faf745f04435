"""Shared data model: images, landmarks, category distributions and seeded RNG streams.

Coordinates are 0-indexed everywhere inside the package: ``x`` is the column,
``y`` the row, and integer values sit on pixel centres.  The 1-indexed
convention of the annotation files is handled only in :mod:`garment_augkit.dataio`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

LANDMARK_NAMES: tuple[str, ...] = (
    "L.Collar",
    "R.Collar",
    "L.Sleeve",
    "R.Sleeve",
    "L.Waistline",
    "R.Waistline",
    "L.Hem",
    "R.Hem",
)
N_LANDMARKS = len(LANDMARK_NAMES)


class AugkitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidRangeError(AugkitError, ValueError):
    pass


class InvalidCoordinateError(AugkitError, ValueError):
    pass


class InvalidParameterError(AugkitError, ValueError):
    pass


class ShapeError(AugkitError, ValueError):
    pass


class Visibility(enum.IntEnum):
    """Tri-state landmark visibility; values equal the on-disk codes."""

    VISIBLE = 0
    OCCLUDED = 1
    OUT_OF_FRAME = 2


@dataclass(frozen=True)
class Image:
    """An H x W x C raster of float intensities in [0, 1].

    ``data`` is stored as a read-only float64 array of shape (height, width, channels).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ShapeError(f"image must be HxW, HxWx1 or HxWx3, got shape {np.shape(self.data)}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("image must be nonempty")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidParameterError("image intensities must be finite and in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class Landmark:
    x: float
    y: float
    visibility: Visibility = Visibility.VISIBLE

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "visibility", Visibility(self.visibility))

    @property
    def in_frame(self) -> bool:
        return self.visibility != Visibility.OUT_OF_FRAME

    def inside(self, width: int, height: int) -> bool:
        return 0.0 <= self.x < width and 0.0 <= self.y < height


@dataclass(frozen=True)
class LandmarkSet:
    """Eight optional landmark slots in the fixed order of ``LANDMARK_NAMES``.

    Absent slots hold ``None``; they are never zero-filled.
    """

    slots: tuple[Optional[Landmark], ...] = (None,) * N_LANDMARKS

    def __post_init__(self):
        slots = tuple(self.slots)
        if len(slots) != N_LANDMARKS:
            raise ShapeError(f"a LandmarkSet has exactly {N_LANDMARKS} slots, got {len(slots)}")
        for s in slots:
            if s is not None and not isinstance(s, Landmark):
                raise TypeError(f"slot entries must be Landmark or None, got {type(s).__name__}")
        object.__setattr__(self, "slots", slots)

    @classmethod
    def empty(cls) -> "LandmarkSet":
        return cls()

    @classmethod
    def from_dict(cls, entries: dict[str, Landmark]) -> "LandmarkSet":
        slots: list[Optional[Landmark]] = [None] * N_LANDMARKS
        for name, lm in entries.items():
            slots[LANDMARK_NAMES.index(name)] = lm
        return cls(tuple(slots))

    def __getitem__(self, key) -> Optional[Landmark]:
        if isinstance(key, str):
            key = LANDMARK_NAMES.index(key)
        return self.slots[key]

    def __iter__(self) -> Iterator[Optional[Landmark]]:
        return iter(self.slots)

    def __len__(self) -> int:
        return N_LANDMARKS

    def present(self) -> list[tuple[int, Landmark]]:
        return [(i, lm) for i, lm in enumerate(self.slots) if lm is not None]

    def with_slot(self, key, lm: Optional[Landmark]) -> "LandmarkSet":
        if isinstance(key, str):
            key = LANDMARK_NAMES.index(key)
        slots = list(self.slots)
        slots[key] = lm
        return LandmarkSet(tuple(slots))

    def map(self, fn: Callable[[Landmark], Optional[Landmark]]) -> "LandmarkSet":
        """Apply ``fn`` to every present slot; empty slots stay empty."""
        return LandmarkSet(tuple(None if lm is None else fn(lm) for lm in self.slots))

    def mark_out_of_frame(self, width: int, height: int) -> "LandmarkSet":
        def check(lm: Landmark) -> Landmark:
            if lm.in_frame and not lm.inside(width, height):
                return replace(lm, visibility=Visibility.OUT_OF_FRAME)
            return lm

        return self.map(check)


@dataclass(frozen=True)
class CategoryDistribution:
    names: tuple[str, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        names = tuple(self.names)
        p = np.array(self.probabilities, dtype=np.float64)
        if p.shape != (len(names),):
            raise ShapeError(f"{len(names)} names but probability vector of shape {p.shape}")
        if len(set(names)) != len(names):
            raise InvalidParameterError("category names must be unique")
        if np.any(p < 0.0) or np.any(p > 1.0) or abs(p.sum() - 1.0) > 1e-9:
            raise InvalidParameterError("probabilities must lie in [0, 1] and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "probabilities", p)

    @property
    def n_categories(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.probabilities[self.names.index(name)])

    def argmax(self) -> str:
        return self.names[int(np.argmax(self.probabilities))]


_U64 = (1 << 64) - 1


@dataclass
class RngStream:
    """A seedable random stream identified by ``(seed, stream_id)``.

    Backed by numpy's PCG64, keyed through ``SeedSequence`` so that equal
    identifiers give equal draws on every platform and different stream ids
    give independent sequences.  A stream is stateful: each draw advances it,
    so hand one stream to exactly one worker.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed <= _U64 and 0 <= self.stream_id <= _U64):
            raise InvalidParameterError("seed and stream_id must be unsigned 64-bit integers")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, lo: float, hi: float) -> float:
        return uniform(self, lo, hi)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def choice_without_replacement(self, population: int, k: int) -> np.ndarray:
        return self._gen.choice(population, size=k, replace=False)


def derive_stream(master: RngStream, index: int) -> RngStream:
    """Child stream number ``index`` of ``master``.

    Depends only on the master's identifiers, never on how far it has been advanced.
    """
    if index < 0:
        raise InvalidParameterError("stream index must be non-negative")
    words = np.random.SeedSequence(entropy=[master.stream_id, index, 0x5EED]).generate_state(2, np.uint32)
    child_id = (int(words[0]) << 32) | int(words[1])
    return RngStream(master.seed, child_id)


def uniform(stream: RngStream, lo: float, hi: float) -> float:
    """One draw from U[lo, hi)."""
    if not lo <= hi:
        raise InvalidRangeError(f"empty range [{lo}, {hi})")
    if lo == hi:
        return float(lo)
    v = lo + (hi - lo) * float(stream.random())
    # rounding can land exactly on hi
    return float(lo) if v >= hi else v


def as_image(data) -> Image:
    return data if isinstance(data, Image) else Image(np.asarray(data))


def all_landmarks_inside(lms: LandmarkSet, width: int, height: int) -> bool:
    return all(lm.inside(width, height) for _, lm in lms.present() if lm.in_frame)


def landmark_array(lms: LandmarkSet) -> np.ndarray:
    """(8, 2) array of coordinates with NaN for empty slots."""
    out = np.full((N_LANDMARKS, 2), np.nan)
    for i, lm in lms.present():
        out[i] = (lm.x, lm.y)
    return out


def landmarks_from_points(points: Sequence[Optional[tuple[float, float]]],
                          visibility: Visibility = Visibility.VISIBLE) -> LandmarkSet:
    return LandmarkSet(tuple(None if p is None else Landmark(p[0], p[1], visibility) for p in points))
