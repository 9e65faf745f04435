"""Annotation files, PNG I/O, bounding-box crops and category taxonomies.

Two on-disk annotation schemas are supported.

Three-file whitespace format (DeepFashion style).  Every file starts with a
sample-count line and a column-header line, then one row per image:

* landmarks: ``path clothes_type (vis x y)*`` with one triple per slot that the
  clothes type defines (upper: collars, sleeves, hems; lower: waistlines, hems;
  full: all eight).  Visibility codes are 0 visible, 1 occluded, 2 out of frame.
  Coordinates are 1-indexed.  A triple ``2 0 0`` marks a defined but missing slot.
* bounding boxes: ``path x1 y1 x2 y2``, integer pixel edges, the box covering
  columns ``x1 .. x2-1`` and rows ``y1 .. y2-1``.
* categories: ``path category_name``.

Record format (CTU and in-lab data): one line per image of ``key=value`` fields,
``path=... category=... [bbox=x1,y1,x2,y2] [size=w,h] [scores=name:p,...]``
followed by one field per landmark name, ``L.Collar=x,y,vis`` (1-indexed) or
``L.Collar=-`` when absent.

All writers use single spaces, ``\\n`` line ends and a trailing newline.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from decimal import Context, Decimal
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

import numpy as np
from PIL import Image as PILImage

from .core import (
    LANDMARK_NAMES,
    N_LANDMARKS,
    AugkitError,
    CategoryDistribution,
    Image,
    InvalidParameterError,
    Landmark,
    LandmarkSet,
    Visibility,
)
from .warp import remap

UPPER, LOWER, FULL = "upper", "lower", "full"
CLOTHES_TYPE_CODES = {1: UPPER, 2: LOWER, 3: FULL}
CLOTHES_TYPE_SLOTS = {
    UPPER: (0, 1, 2, 3, 6, 7),
    LOWER: (4, 5, 6, 7),
    FULL: tuple(range(N_LANDMARKS)),
}

CTU_TO_DEEPFASHION: dict[str, frozenset[str]] = {
    "bluse": frozenset({"Blouse"}),
    "hoody": frozenset({"Hoodie", "Sweater"}),
    "pants": frozenset({"Jeans", "Jeggins", "Joggers", "Leggins"}),
    "polo": frozenset({"Tee", "Button-Down"}),
    "polo-long": frozenset({"Button-Down", "Henley", "Jacket"}),
    "skirt": frozenset({"Skirt"}),
    "tshirt": frozenset({"Tee"}),
    "tshirt-long": frozenset({"Cardigan", "Sweater", "Tee"}),
}
# the 13 DeepFashion categories reachable from CTU labels
CTU_ALLOWED_DEEPFASHION = frozenset().union(*CTU_TO_DEEPFASHION.values())

TextSource = Union[str, os.PathLike, TextIO]


class ParseError(AugkitError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InvalidBBoxError(AugkitError, ValueError):
    pass


class UnknownCategoryError(AugkitError, KeyError):
    pass


class DegenerateMaskError(AugkitError, ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedSample:
    image_path: str
    landmarks: LandmarkSet = field(default_factory=LandmarkSet)
    clothes_type: str = FULL
    bbox: Optional[tuple[int, int, int, int]] = None
    category: Optional[str] = None
    size: Optional[tuple[int, int]] = None
    scores: Optional[CategoryDistribution] = None

    def __post_init__(self):
        if self.clothes_type not in CLOTHES_TYPE_SLOTS:
            raise InvalidParameterError(f"unknown clothes type {self.clothes_type!r}")
        allowed = CLOTHES_TYPE_SLOTS[self.clothes_type]
        for i, _ in self.landmarks.present():
            if i not in allowed:
                raise InvalidParameterError(
                    f"{self.image_path}: slot {LANDMARK_NAMES[i]} is not defined for {self.clothes_type} items")
        if self.bbox is not None:
            check_bbox(self.bbox)


def check_bbox(bbox, width: Optional[int] = None, height: Optional[int] = None) -> tuple[int, int, int, int]:
    x1, y1, x2, y2 = (int(v) for v in bbox)
    if not (x1 < x2 and y1 < y2):
        raise InvalidBBoxError(f"degenerate bounding box {bbox}")
    if width is not None and (x1 < 0 or y1 < 0 or x2 > width or y2 > height):
        raise InvalidBBoxError(f"bounding box {bbox} exceeds the {width}x{height} image")
    return x1, y1, x2, y2


# ---------------------------------------------------------------------------
# number formatting; the 1-index shift is done in decimal so that it round-trips exactly


_EXACT = Context(prec=800)


def _parse_coord(token: str, line: int) -> float:
    try:
        v = float(_EXACT.subtract(Decimal(token), 1))
    except ArithmeticError:
        raise ParseError(f"bad coordinate {token!r}", line) from None
    if v != v or v in (float("inf"), float("-inf")):
        raise ParseError(f"non-finite coordinate {token!r}", line)
    return v


def _format_coord(x: float) -> str:
    d = _EXACT.add(Decimal(repr(float(x))), 1)
    if d == d.to_integral_value():
        return str(int(d))
    return format(_EXACT.normalize(d), "f")


def _open_text(src: TextSource) -> list[str]:
    if hasattr(src, "read"):
        text = src.read()
    else:
        text = Path(src).read_text()
    return text.splitlines()


def _check_header(lines: list[str]) -> int:
    if len(lines) < 2:
        raise ParseError("missing count or header line", len(lines) + 1)
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"bad sample count {lines[0]!r}", 1) from None
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != count:
        raise ParseError(f"header announces {count} samples, found {len(rows)}", 1)
    return count


def _rows(lines: list[str]):
    for i, ln in enumerate(lines[2:], start=3):
        if ln.strip():
            yield i, ln.split()


# ---------------------------------------------------------------------------
# landmark file

LANDMARK_HEADER = "image_name clothes_type " + " ".join(
    f"landmark_visibility_{i} landmark_location_x_{i} landmark_location_y_{i}" for i in range(1, N_LANDMARKS + 1))


def parse_landmark_file(src: TextSource) -> list[AnnotatedSample]:
    lines = _open_text(src)
    _check_header(lines)
    out = []
    seen = set()
    for lineno, tok in _rows(lines):
        if len(tok) < 2:
            raise ParseError("row needs a path and a clothes type", lineno)
        path = tok[0]
        if path in seen:
            raise ParseError(f"duplicate image path {path}", lineno)
        seen.add(path)
        try:
            ctype = CLOTHES_TYPE_CODES[int(tok[1])]
        except (ValueError, KeyError):
            raise ParseError(f"unknown clothes type code {tok[1]!r}", lineno) from None
        slots_for_type = CLOTHES_TYPE_SLOTS[ctype]
        triples = tok[2:]
        if len(triples) != 3 * len(slots_for_type):
            raise ParseError(f"{ctype} rows need {len(slots_for_type)} landmark triples, got {len(triples) / 3:g}",
                             lineno)
        slots: list[Optional[Landmark]] = [None] * N_LANDMARKS
        for j, slot in enumerate(slots_for_type):
            vis_tok, x_tok, y_tok = triples[3 * j:3 * j + 3]
            try:
                vis = Visibility(int(vis_tok))
            except ValueError:
                raise ParseError(f"bad visibility code {vis_tok!r}", lineno) from None
            x, y = _parse_coord(x_tok, lineno), _parse_coord(y_tok, lineno)
            if vis == Visibility.OUT_OF_FRAME and x == -1.0 and y == -1.0:
                continue
            slots[slot] = Landmark(x, y, vis)
        out.append(AnnotatedSample(path, LandmarkSet(tuple(slots)), ctype))
    return out


def _type_code(ctype: str) -> int:
    return {v: k for k, v in CLOTHES_TYPE_CODES.items()}[ctype]


def format_landmark_file(samples: Iterable[AnnotatedSample]) -> str:
    samples = list(samples)
    lines = [str(len(samples)), LANDMARK_HEADER]
    for s in samples:
        parts = [s.image_path, str(_type_code(s.clothes_type))]
        for slot in CLOTHES_TYPE_SLOTS[s.clothes_type]:
            lm = s.landmarks[slot]
            if lm is None:
                parts += ["2", "0", "0"]
            else:
                parts += [str(int(lm.visibility)), _format_coord(lm.x), _format_coord(lm.y)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# bbox and category files


def parse_bbox_file(src: TextSource) -> dict[str, tuple[int, int, int, int]]:
    lines = _open_text(src)
    _check_header(lines)
    out: dict[str, tuple[int, int, int, int]] = {}
    for lineno, tok in _rows(lines):
        if len(tok) != 5:
            raise ParseError("bbox rows are: path x1 y1 x2 y2", lineno)
        if tok[0] in out:
            raise ParseError(f"duplicate image path {tok[0]}", lineno)
        try:
            box = tuple(int(t) for t in tok[1:])
        except ValueError:
            raise ParseError(f"non-integer bbox in {tok[1:]}", lineno) from None
        out[tok[0]] = box
    return out


def parse_category_file(src: TextSource) -> dict[str, str]:
    lines = _open_text(src)
    _check_header(lines)
    out: dict[str, str] = {}
    for lineno, tok in _rows(lines):
        if len(tok) != 2:
            raise ParseError("category rows are: path category_name", lineno)
        if tok[0] in out:
            raise ParseError(f"duplicate image path {tok[0]}", lineno)
        out[tok[0]] = tok[1]
    return out


def format_bbox_file(boxes: dict[str, tuple[int, int, int, int]]) -> str:
    lines = [str(len(boxes)), "image_name x_1 y_1 x_2 y_2"]
    lines += [f"{p} {b[0]} {b[1]} {b[2]} {b[3]}" for p, b in boxes.items()]
    return "\n".join(lines) + "\n"


def format_category_file(cats: dict[str, str]) -> str:
    lines = [str(len(cats)), "image_name category_name"]
    lines += [f"{p} {c}" for p, c in cats.items()]
    return "\n".join(lines) + "\n"


@dataclass
class JoinReport:
    missing_bbox: list[str] = field(default_factory=list)
    missing_category: list[str] = field(default_factory=list)
    unmatched_bbox: list[str] = field(default_factory=list)
    unmatched_category: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.missing_bbox or self.missing_category or self.unmatched_bbox or self.unmatched_category)


def join_annotations(samples: list[AnnotatedSample], bboxes: Optional[dict] = None,
                     categories: Optional[dict] = None) -> tuple[list[AnnotatedSample], JoinReport]:
    """Attach boxes and categories to landmark records by image path.

    Paths that fail to join on either side are listed in the report, never dropped silently.
    """
    report = JoinReport()
    paths = {s.image_path for s in samples}
    out = []
    for s in samples:
        kw = {}
        if bboxes is not None:
            if s.image_path in bboxes:
                kw["bbox"] = bboxes[s.image_path]
            else:
                report.missing_bbox.append(s.image_path)
        if categories is not None:
            if s.image_path in categories:
                kw["category"] = categories[s.image_path]
            else:
                report.missing_category.append(s.image_path)
        out.append(replace(s, **kw))
    if bboxes is not None:
        report.unmatched_bbox = [p for p in bboxes if p not in paths]
    if categories is not None:
        report.unmatched_category = [p for p in categories if p not in paths]
    return out, report


# ---------------------------------------------------------------------------
# record format


def _infer_type(lms: LandmarkSet) -> str:
    present = {i for i, _ in lms.present()}
    for ctype in (UPPER, LOWER):
        if present <= set(CLOTHES_TYPE_SLOTS[ctype]) and present:
            return ctype
    return FULL


def parse_record_file(src: TextSource) -> list[AnnotatedSample]:
    out = []
    seen = set()
    for lineno, line in enumerate(_open_text(src), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields: dict[str, str] = {}
        for tok in line.split():
            key, sep, value = tok.partition("=")
            if not sep or key in fields:
                raise ParseError(f"malformed or repeated field {tok!r}", lineno)
            fields[key] = value
        if "path" not in fields:
            raise ParseError("record has no path", lineno)
        path = fields.pop("path")
        if path in seen:
            raise ParseError(f"duplicate image path {path}", lineno)
        seen.add(path)
        slots: list[Optional[Landmark]] = [None] * N_LANDMARKS
        for i, name in enumerate(LANDMARK_NAMES):
            value = fields.pop(name, "-")
            if value == "-":
                continue
            parts = value.split(",")
            if len(parts) != 3:
                raise ParseError(f"{name} needs x,y,visibility", lineno)
            try:
                vis = Visibility(int(parts[2]))
            except ValueError:
                raise ParseError(f"bad visibility code {parts[2]!r}", lineno) from None
            slots[i] = Landmark(_parse_coord(parts[0], lineno), _parse_coord(parts[1], lineno), vis)
        lms = LandmarkSet(tuple(slots))
        try:
            bbox = tuple(int(v) for v in fields.pop("bbox").split(",")) if "bbox" in fields else None
            size = tuple(int(v) for v in fields.pop("size").split(",")) if "size" in fields else None
        except ValueError:
            raise ParseError("bbox and size take comma-separated integers", lineno) from None
        if (bbox is not None and len(bbox) != 4) or (size is not None and len(size) != 2):
            raise ParseError("bbox needs 4 values and size 2", lineno)
        scores = None
        if "scores" in fields:
            try:
                pairs = [kv.rsplit(":", 1) for kv in fields.pop("scores").split(",")]
                scores = CategoryDistribution(tuple(k for k, _ in pairs), np.array([float(v) for _, v in pairs]))
            except (ValueError, AugkitError) as exc:
                raise ParseError(f"bad scores field: {exc}", lineno) from None
        category = fields.pop("category", None)
        ctype = fields.pop("type", None) or _infer_type(lms)
        if fields:
            raise ParseError(f"unknown fields {sorted(fields)}", lineno)
        try:
            out.append(AnnotatedSample(path, lms, ctype, bbox, category, size, scores))
        except AugkitError as exc:
            raise ParseError(str(exc), lineno) from None
    return out


def format_record_file(samples: Iterable[AnnotatedSample]) -> str:
    lines = []
    for s in samples:
        parts = [f"path={s.image_path}"]
        if s.category is not None:
            parts.append(f"category={s.category}")
        parts.append(f"type={s.clothes_type}")
        if s.bbox is not None:
            parts.append("bbox=" + ",".join(str(v) for v in s.bbox))
        if s.size is not None:
            parts.append("size=" + ",".join(str(v) for v in s.size))
        if s.scores is not None:
            parts.append("scores=" + ",".join(f"{n}:{float(p)!r}" for n, p in zip(s.scores.names, s.scores.probabilities)))
        for name, lm in zip(LANDMARK_NAMES, s.landmarks):
            if lm is None:
                parts.append(f"{name}=-")
            else:
                parts.append(f"{name}={_format_coord(lm.x)},{_format_coord(lm.y)},{int(lm.visibility)}")
        lines.append(" ".join(parts))
    return "".join(ln + "\n" for ln in lines)


# ---------------------------------------------------------------------------
# images


def load_png(path: Union[str, os.PathLike]) -> Image:
    with PILImage.open(path) as im:
        im.load()
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return Image(arr)


def to_uint8(img: Image) -> np.ndarray:
    """Round-half-up quantization to 8 bits."""
    q = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    return q[:, :, 0] if img.channels == 1 else q


def save_png(img: Image, path: Union[str, os.PathLike]) -> None:
    PILImage.fromarray(to_uint8(img)).save(path, format="PNG", optimize=False)


# ---------------------------------------------------------------------------
# cropping


def crop_resize(img: Image, sample: AnnotatedSample, target: int = 224) -> tuple[Image, LandmarkSet]:
    """Crop to the sample's box and bilinearly resize to ``target`` x ``target``.

    Output pixel ``u`` samples source column ``x1 + u * (x2 - x1) / target``,
    matching the landmark map ``(x - x1) * target / (x2 - x1)``.
    """
    if sample.bbox is None:
        raise InvalidBBoxError(f"{sample.image_path} has no bounding box")
    x1, y1, x2, y2 = check_bbox(sample.bbox, img.width, img.height)
    if target < 1:
        raise InvalidParameterError("target size must be positive")
    sx, sy = (x2 - x1) / target, (y2 - y1) / target
    u = np.arange(target, dtype=np.float64)
    src_x = np.broadcast_to(x1 + u[None, :] * sx, (target, target))
    src_y = np.broadcast_to(y1 + u[:, None] * sy, (target, target))
    # stay inside the box: clamp to its last pixel
    out = remap(img, np.minimum(src_x, x2 - 1), np.minimum(src_y, y2 - 1))

    def move(lm: Landmark) -> Landmark:
        vis = lm.visibility
        if not (x1 <= lm.x < x2 and y1 <= lm.y < y2):
            vis = Visibility.OUT_OF_FRAME
        return Landmark((lm.x - x1) * target / (x2 - x1), (lm.y - y1) * target / (y2 - y1), vis)

    return Image(out), sample.landmarks.map(move)


# ---------------------------------------------------------------------------
# categories


def map_category(src: str, mapping: dict[str, frozenset[str]] = CTU_TO_DEEPFASHION) -> frozenset[str]:
    try:
        return mapping[src]
    except KeyError:
        raise UnknownCategoryError(src) from None


def mask_categories(dist: CategoryDistribution, allowed: Iterable[str]) -> CategoryDistribution:
    """Zero every category outside ``allowed`` and renormalize the rest."""
    allowed = set(allowed)
    if not allowed:
        raise DegenerateMaskError("allowed set is empty")
    unknown = allowed - set(dist.names)
    if unknown:
        raise UnknownCategoryError(f"not in the vocabulary: {sorted(unknown)}")
    keep = np.array([n in allowed for n in dist.names])
    p = np.where(keep, dist.probabilities, 0.0)
    mass = p.sum()
    if mass <= 0.0:
        raise DegenerateMaskError("no probability mass on the allowed categories")
    return CategoryDistribution(dist.names, p / mass)


def parse_name_list(src: TextSource) -> list[str]:
    """One name per line; blank lines and ``#`` comments ignored."""
    return [ln.strip() for ln in _open_text(src) if ln.strip() and not ln.lstrip().startswith("#")]


def normalized_bbox_coords(lm: Landmark, bbox) -> tuple[float, float]:
    x1, y1, x2, y2 = bbox
    return (lm.x - x1) / (x2 - x1), (lm.y - y1) / (y2 - y1)
