"""Seeded synthetic annotations and images for tests, demos and benchmarks.

The category vocabulary has 46 names and contains every target of the CTU
mapping, with that table's spellings, so masked evaluation works on it.  It is
a stand-in, not the real DeepFashion list.
"""
from __future__ import annotations

import numpy as np

from .core import Image, Landmark, LandmarkSet, RngStream, Visibility, N_LANDMARKS
from .dataio import CLOTHES_TYPE_SLOTS, CTU_ALLOWED_DEEPFASHION, FULL, LOWER, UPPER, AnnotatedSample

_EXTRA_NAMES = (
    "Anorak", "Blazer", "Bomber", "Flannel", "Halter", "Jersey", "Parka", "Peacoat", "Poncho", "Tank", "Top",
    "Turtleneck", "Capris", "Chinos", "Culottes", "Cutoffs", "Gauchos", "Sarong", "Shorts", "Sweatpants",
    "Sweatshorts", "Trunks", "Caftan", "Cape", "Coat", "Coverup", "Dress", "Jumpsuit", "Kimono", "Nightdress",
    "Robe", "Romper", "Sundress",
)
SYNTHETIC_VOCABULARY: tuple[str, ...] = tuple(sorted(CTU_ALLOWED_DEEPFASHION)) + _EXTRA_NAMES
assert len(SYNTHETIC_VOCABULARY) == 46 and len(set(SYNTHETIC_VOCABULARY)) == 46


def random_landmarks(rng: RngStream, ctype: str, width: int, height: int, integer: bool = False,
                     missing_rate: float = 0.1) -> LandmarkSet:
    g = rng.generator
    slots = [None] * N_LANDMARKS
    for i in CLOTHES_TYPE_SLOTS[ctype]:
        if g.random() < missing_rate:
            continue
        if integer:
            x, y = float(g.integers(0, width)), float(g.integers(0, height))
        else:
            x, y = g.uniform(0, width - 1), g.uniform(0, height - 1)
        vis = Visibility(int(g.choice([0, 0, 0, 1, 2])))
        slots[i] = Landmark(x, y, vis)
    return LandmarkSet(tuple(slots))


def random_sample(rng: RngStream, index: int, width: int = 300, height: int = 400,
                  integer: bool = False) -> AnnotatedSample:
    g = rng.generator
    ctype = (UPPER, LOWER, FULL)[int(g.integers(0, 3))]
    x1, y1 = int(g.integers(0, width // 4)), int(g.integers(0, height // 4))
    x2, y2 = int(g.integers(width // 2, width + 1)), int(g.integers(height // 2, height + 1))
    return AnnotatedSample(
        image_path=f"img/sample_{index:05d}.png",
        landmarks=random_landmarks(rng, ctype, width, height, integer),
        clothes_type=ctype,
        bbox=(x1, y1, x2, y2),
        category=SYNTHETIC_VOCABULARY[int(g.integers(0, len(SYNTHETIC_VOCABULARY)))],
        size=(width, height),
    )


def random_samples(n: int, seed: int = 0, **kw) -> list[AnnotatedSample]:
    rng = RngStream(seed)
    return [random_sample(rng, i, **kw) for i in range(n)]


def random_image(rng: RngStream, width: int, height: int, channels: int = 3) -> Image:
    """Smooth colour gradients plus noise, so warps and crops change pixel values visibly."""
    g = rng.generator
    yy, xx = np.mgrid[0:height, 0:width] / max(width, height)
    planes = []
    for _ in range(channels):
        a, b, c = g.uniform(-1, 1, 3)
        planes.append(0.5 + 0.25 * np.sin(6 * (a * xx + b * yy) + c) + 0.1 * g.random((height, width)))
    return Image(np.clip(np.stack(planes, axis=-1), 0.0, 1.0))
