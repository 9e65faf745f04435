"""Command-line front end: ``augment``, ``eval``, ``oracle`` and ``overlay``.

Configuration for ``augment`` comes from a flat ``key=value`` file (``--config``)
with command-line flags taking precedence; see :class:`PipelineConfig` for keys.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dataio
from .core import (
    AugkitError,
    CategoryDistribution,
    Image,
    Landmark,
    LandmarkSet,
    RngStream,
    ShapeError,
    Visibility,
    derive_stream,
    uniform,
)
from .heatmap import HeatmapStack, encode_heatmaps
from .lmmap import default_candidate_count, invert_landmark, match_exact, candidate_set, oracle_invert
from .metrics import EvalSample, build_report
from .warp import ElasticParams, canvas_center, elastic_warp, make_displacement_fields, rotate_image, rotate_landmarks

SEED_ENV = "GARMENT_AUGKIT_SEED"
AUGMENTATIONS = ("crop", "rotate", "elastic")


class ConfigError(AugkitError, ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    augment: tuple[str, ...] = AUGMENTATIONS
    n_s: int = 3
    alpha: float = 500.0
    sigma: float = 40.0
    rot_min: float = 0.0
    rot_max: float = 2 * math.pi
    target: int = 224
    n: Optional[int] = None
    sigma_h: float = 8.0
    heatmaps: bool = False
    fill: float = 0.0
    out: str = "augmented"

    def __post_init__(self):
        unknown = [a for a in self.augment if a not in AUGMENTATIONS]
        if unknown:
            raise ConfigError(f"unknown augmentations {unknown}; choose from {AUGMENTATIONS}")
        if self.rot_min > self.rot_max:
            raise ConfigError("rot_min must not exceed rot_max")
        if self.target < 1 or (self.n is not None and self.n < 1) or self.sigma_h <= 0:
            raise ConfigError("target, n and sigma_h must be positive")
        if not 0.0 <= self.fill <= 1.0:
            raise ConfigError("fill must lie in [0, 1]")
        try:
            self.elastic_params
        except AugkitError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def elastic_params(self) -> ElasticParams:
        return ElasticParams(self.n_s, self.alpha, self.sigma)


def _convert(name: str, raw: str):
    f = {f.name: f for f in dataclasses.fields(PipelineConfig)}[name]
    t = str(f.type)
    try:
        if name == "augment":
            return tuple(a.strip() for a in raw.split(",") if a.strip())
        if t.startswith("Optional") and raw.strip().lower() in ("", "none", "auto"):
            return None
        if "bool" in t:
            if raw.strip().lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.strip().lower() in ("true", "1", "yes")
        if "int" in t:
            return int(raw)
        if "float" in t:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines; unknown keys are rejected."""
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key=value")
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw.strip())
    return values


def build_config(config_path: Optional[str], overrides: dict) -> PipelineConfig:
    values = parse_config_text(Path(config_path).read_text()) if config_path else {}
    if "seed" not in values and "seed" not in overrides and os.environ.get(SEED_ENV):
        values["seed"] = _convert("seed", os.environ[SEED_ENV])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


# ---------------------------------------------------------------------------
# augment


def _output_name(path: str) -> str:
    return str(Path(path).with_suffix(".png"))


def augment_one(index: int, sample: dataio.AnnotatedSample, cfg: PipelineConfig, image_dir: Path,
                out_dir: Path) -> tuple[dict, Optional[dataio.AnnotatedSample]]:
    """Augment a single image; soft failures are returned in the manifest record."""
    stream = derive_stream(RngStream(cfg.seed), index)
    record = {"index": index, "path": sample.image_path, "seed": cfg.seed, "stream_id": stream.stream_id}
    try:
        img = dataio.load_png(image_dir / sample.image_path)
        lms = sample.landmarks
        if "crop" in cfg.augment:
            if sample.bbox is None:
                raise dataio.InvalidBBoxError("crop requested but the sample has no bounding box")
            img, lms = dataio.crop_resize(img, sample, cfg.target)
            record["bbox"] = list(sample.bbox)
        if "rotate" in cfg.augment:
            theta = uniform(stream, cfg.rot_min, cfg.rot_max)
            img = rotate_image(img, theta, cfg.fill)
            lms = rotate_landmarks(lms, theta, canvas_center(img.width, img.height), (img.width, img.height))
            record["theta"] = theta
        if "elastic" in cfg.augment:
            p = cfg.elastic_params
            img, lms, _ = elastic_warp(img, lms, p, stream, cfg.n)
            record["elastic"] = {"n_s": p.n_s, "alpha": p.alpha, "sigma": p.sigma,
                                 "n": cfg.n or default_candidate_count(img.width, img.height)}
        lms = lms.mark_out_of_frame(img.width, img.height)
        name = _output_name(sample.image_path)
        dest = out_dir / "images" / name
        dest.parent.mkdir(parents=True, exist_ok=True)
        dataio.save_png(img, dest)
        if cfg.heatmaps:
            hm_dest = out_dir / "heatmaps" / (name + ".npy")
            hm_dest.parent.mkdir(parents=True, exist_ok=True)
            np.save(hm_dest, encode_heatmaps(lms, img.width, img.height, cfg.sigma_h).maps.astype(np.float32))
        record.update(status="ok", output=name, size=[img.width, img.height])
        out = dataclasses.replace(sample, image_path=name, landmarks=lms, bbox=(0, 0, img.width, img.height))
        return record, out
    except (OSError, AugkitError, ValueError) as exc:
        record.update(status="error", error=f"{type(exc).__name__}: {exc}")
        return record, None


def run_augment(cfg: PipelineConfig, landmarks: str, image_dir: str, bbox: Optional[str] = None,
                categories: Optional[str] = None, jobs: int = 1) -> list[dict]:
    samples = dataio.parse_landmark_file(landmarks)
    boxes = dataio.parse_bbox_file(bbox) if bbox else None
    cats = dataio.parse_category_file(categories) if categories else None
    samples, report = dataio.join_annotations(samples, boxes, cats)
    for label, paths in (("missing bbox", report.missing_bbox), ("missing category", report.missing_category),
                         ("bbox without landmarks", report.unmatched_bbox),
                         ("category without landmarks", report.unmatched_category)):
        if paths:
            print(f"warning: {len(paths)} {label}: {' '.join(paths[:5])}", file=sys.stderr)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    work = lambda item: augment_one(item[0], item[1], cfg, Path(image_dir), out_dir)  # noqa: E731
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, enumerate(samples)))
    else:
        results = [work(item) for item in enumerate(samples)]

    manifest = [r for r, _ in results]
    done = [s for _, s in results if s is not None]
    (out_dir / "list_landmarks.txt").write_text(dataio.format_landmark_file(done))
    (out_dir / "list_bbox.txt").write_text(dataio.format_bbox_file({s.image_path: s.bbox for s in done}))
    if cats is not None:
        (out_dir / "list_category.txt").write_text(
            dataio.format_category_file({s.image_path: s.category for s in done if s.category is not None}))
    with open(out_dir / "manifest.jsonl", "w") as fh:
        for r in manifest:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return manifest


def check_augmented(out_dir: str) -> list[str]:
    """Independent post-hoc check of an augment run: every in-frame landmark lies inside its image."""
    out = Path(out_dir)
    problems = []
    for s in dataio.parse_landmark_file(out / "list_landmarks.txt"):
        img = dataio.load_png(out / "images" / s.image_path)
        for i, lm in s.landmarks.present():
            if lm.visibility != Visibility.OUT_OF_FRAME and not (
                    0 <= lm.x < img.width and 0 <= lm.y < img.height):
                problems.append(f"{s.image_path}: slot {i} at ({lm.x}, {lm.y}) outside {img.width}x{img.height}")
    return problems


# ---------------------------------------------------------------------------
# eval


def _vocabulary(preds: Sequence[dataio.AnnotatedSample], labels) -> tuple[str, ...]:
    scored = [p.scores.names for p in preds if p.scores is not None]
    if scored:
        if any(names != scored[0] for names in scored):
            raise ShapeError("predicted score vectors use different category vocabularies")
        return scored[0]
    names = {p.category for p in preds if p.category is not None}
    for lab in labels:
        names |= {lab} if isinstance(lab, str) else set(lab)
    return tuple(sorted(names))


def run_eval(pred_path: str, gt_path: str, k_list: Sequence[int], mask_path: Optional[str] = None,
             category_map: Optional[str] = None, size: tuple[int, int] = (224, 224), err=None):
    err = err or sys.stderr
    preds = {s.image_path: s for s in dataio.parse_record_file(pred_path)}
    gts = dataio.parse_record_file(gt_path)
    matched = [(preds[g.image_path], g) for g in gts if g.image_path in preds]
    missing = [g.image_path for g in gts if g.image_path not in preds]
    extra = sorted(set(preds) - {g.image_path for g in gts})
    if missing or extra:
        print(f"warning: {len(missing) + len(extra)} unmatched paths excluded: "
              + " ".join((missing + extra)[:10]), file=err)

    def label_of(g):
        if g.category is None:
            return None
        if category_map == "ctu":
            return dataio.map_category(g.category)
        return g.category

    labels = [label_of(g) for _, g in matched]
    vocab = _vocabulary([p for p, _ in matched], [lab for lab in labels if lab is not None])
    allowed = dataio.parse_name_list(mask_path) if mask_path else None
    degenerate = 0
    samples = []
    for (p, g), lab in zip(matched, labels):
        scores = p.scores
        if scores is None and p.category is not None and vocab:
            scores = CategoryDistribution(vocab, np.array([1.0 if n == p.category else 0.0 for n in vocab]))
        if scores is not None and allowed is not None:
            try:
                scores = dataio.mask_categories(scores, allowed)
            except dataio.DegenerateMaskError:
                degenerate += 1
                keep = np.array([n in set(allowed) for n in scores.names], dtype=float)
                scores = CategoryDistribution(scores.names, keep / keep.sum())
        w, h = g.size if g.size is not None else size
        samples.append(EvalSample(p.landmarks, g.landmarks, w, h, scores, lab, g.category))
    if degenerate:
        print(f"warning: {degenerate} predictions had no mass on the allowed categories; scored as uniform",
              file=err)
    if vocab:
        k_list = [k for k in k_list if k <= len(vocab)]
    return build_report(samples, k_list)


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleSummary:
    trials: int
    within: int
    exact_fired: int
    exact_agree: int
    out_of_frame: int
    max_discrepancy: float
    mean_discrepancy: float
    tolerance: float
    required_rate: float

    @property
    def pass_rate(self) -> float:
        return self.within / self.trials

    @property
    def passed(self) -> bool:
        return self.pass_rate >= self.required_rate

    def lines(self) -> list[str]:
        return [
            f"trials\t{self.trials}",
            f"within_{self.tolerance:g}px\t{self.within}",
            f"pass_rate\t{100.0 * self.pass_rate:.2f}%",
            f"exact_matches\t{self.exact_fired}",
            f"exact_agree_with_oracle\t{self.exact_agree}",
            f"out_of_frame\t{self.out_of_frame}",
            f"max_discrepancy_px\t{self.max_discrepancy:.4f}",
            f"mean_discrepancy_px\t{self.mean_discrepancy:.4f}",
            f"verdict\t{'PASS' if self.passed else 'FAIL'} (required {100.0 * self.required_rate:.0f}%)",
        ]


def run_oracle(trials: int = 100, size: int = 64, params: ElasticParams = ElasticParams(3, 100.0, 10.0),
               seed: int = 0, n: Optional[int] = None, tolerance: float = 2.0,
               required_rate: float = 0.99) -> OracleSummary:
    """Compare candidate-set inversion against exhaustive search on random fields and landmarks."""
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    n = n or default_candidate_count(size, size)
    master = RngStream(seed)
    discrepancies = []
    exact_fired = exact_agree = out_of_frame = 0
    for t in range(trials):
        stream = derive_stream(master, t)
        fields = make_displacement_fields(size, size, params, stream)
        lm = Landmark(uniform(stream, 0, size - 1), uniform(stream, 0, size - 1))
        got = invert_landmark(fields, lm, n)
        ref = oracle_invert(fields, lm)
        d = math.hypot(got.x - ref.x, got.y - ref.y)
        discrepancies.append(d)
        hit = match_exact(candidate_set(fields, lm.x, "X", n), candidate_set(fields, lm.y, "Y", n))
        if hit is not None:
            exact_fired += 1
            exact_agree += d == 0.0
        out_of_frame += got.visibility == Visibility.OUT_OF_FRAME
    d = np.array(discrepancies)
    return OracleSummary(trials, int(np.sum(d <= tolerance)), exact_fired, exact_agree, out_of_frame,
                         float(d.max()), float(d.mean()), tolerance, required_rate)


# ---------------------------------------------------------------------------
# overlay

CROSS_ARM = 5


def render_overlay(img: Image, lms: LandmarkSet, heatmaps=None, color=(0.0, 0.0, 1.0), alpha: float = 0.5,
                   arm: int = CROSS_ARM) -> Image:
    """Draw a cross per in-frame landmark, optionally over a red heatmap tint."""
    data = img.data
    drawn = [lm for _, lm in lms.present() if lm.in_frame]
    if heatmaps is None and not drawn:
        return img
    out = np.repeat(data, 3, axis=2) if img.channels == 1 else data.copy()
    if heatmaps is not None:
        maps = heatmaps.maps if isinstance(heatmaps, HeatmapStack) else np.asarray(heatmaps, dtype=np.float64)
        if maps.ndim == 2:
            maps = maps[None]
        if maps.shape[1:] != (img.height, img.width):
            raise ShapeError(f"heatmaps {maps.shape[1:]} do not match the {img.height}x{img.width} image")
        a = alpha * np.clip(maps.max(axis=0), 0.0, 1.0)[:, :, None]
        out = (1.0 - a) * out + a * np.array([1.0, 0.0, 0.0])
    col = np.asarray(color, dtype=np.float64)
    for lm in drawn:
        cx, cy = int(math.floor(lm.x + 0.5)), int(math.floor(lm.y + 0.5))
        for d in range(-arm, arm + 1):
            if 0 <= cx + d < img.width and 0 <= cy < img.height:
                out[cy, cx + d] = col
            if 0 <= cx < img.width and 0 <= cy + d < img.height:
                out[cy + d, cx] = col
    return Image(np.clip(out, 0.0, 1.0))


def _load_any_landmarks(path: str, key: Optional[str], image_name: str) -> LandmarkSet:
    text = Path(path).read_text()
    first = text.lstrip().split("\n", 1)[0].strip()
    samples = dataio.parse_landmark_file(path) if first.isdigit() else dataio.parse_record_file(path)
    if key is not None:
        chosen = [s for s in samples if s.image_path == key]
    elif len(samples) == 1:
        chosen = samples
    else:
        chosen = [s for s in samples if Path(s.image_path).name == image_name
                  or Path(s.image_path).stem == Path(image_name).stem]
    if len(chosen) != 1:
        raise ConfigError(f"cannot pick one landmark record for {key or image_name} from {path}")
    return chosen[0].landmarks


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _pair(text: str) -> tuple[int, int]:
    vals = _int_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected W,H")
    return vals[0], vals[1]


def _rgb(text: str) -> tuple[float, float, float]:
    vals = _int_list(text)
    if len(vals) != 3 or not all(0 <= v <= 255 for v in vals):
        raise argparse.ArgumentTypeError("expected R,G,B in 0..255")
    return tuple(v / 255.0 for v in vals)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="garment-augkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("augment", help="crop, rotate and elastically warp an annotated image set")
    a.add_argument("--landmarks", required=True, help="landmark annotation file")
    a.add_argument("--images", required=True, help="directory the annotation paths are relative to")
    a.add_argument("--bbox", help="bounding-box annotation file (needed for crop)")
    a.add_argument("--categories", help="category annotation file, copied through")
    a.add_argument("--config", help="key=value configuration file")
    a.add_argument("--seed", type=_u64, help=f"master seed (fallback: ${SEED_ENV})")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", help="output directory")
    a.add_argument("--augment", help="comma-separated subset of crop,rotate,elastic; 'none' for no augmentation")
    a.add_argument("--alpha", type=float)
    a.add_argument("--sigma", type=float)
    a.add_argument("--n-s", dest="n_s", type=int)
    a.add_argument("--target", type=int)
    a.add_argument("--heatmaps", action="store_true", default=None, help="also write per-image heatmap stacks")

    e = sub.add_parser("eval", help="score predicted annotations against ground truth")
    e.add_argument("pred", help="predicted records")
    e.add_argument("gt", help="ground-truth records")
    e.add_argument("--k", type=_int_list, default=[1, 3, 5], help="comma-separated k values")
    e.add_argument("--mask", help="file with allowed category names, one per line")
    e.add_argument("--category-map", choices=["ctu"], help="map ground-truth names through a taxonomy table")
    e.add_argument("--size", type=_pair, default=(224, 224), help="image W,H when records carry no size")

    o = sub.add_parser("oracle", help="check landmark inversion against exhaustive search")
    o.add_argument("--trials", type=int, default=100)
    o.add_argument("--size", type=int, default=64)
    o.add_argument("--n-s", dest="n_s", type=int, default=3)
    o.add_argument("--alpha", type=float, default=100.0)
    o.add_argument("--sigma", type=float, default=10.0)
    o.add_argument("--n", type=int, help="candidate count (default: scaled with image size)")
    o.add_argument("--seed", type=_u64)
    o.add_argument("--config", help="key=value file; n_s, alpha, sigma, n and seed are honoured")
    o.add_argument("--strict", action="store_true", help="exit 1 when the pass rate is below 99%%")

    v = sub.add_parser("overlay", help="draw landmarks (and heatmaps) onto an image")
    v.add_argument("image")
    v.add_argument("--landmarks", help="landmark or record file")
    v.add_argument("--path", help="annotation path of the record to draw")
    v.add_argument("--heatmaps", help=".npy stack of shape (8, H, W)")
    v.add_argument("--out", required=True, help="output PNG")
    v.add_argument("--color", type=_rgb, default=(0.0, 0.0, 1.0), help="cross colour R,G,B (default blue)")
    v.add_argument("--alpha", type=float, default=0.5, help="heatmap tint strength")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "augment":
            overrides = {k: getattr(args, k) for k in ("seed", "out", "alpha", "sigma", "n_s", "target", "heatmaps")}
            if args.augment is not None:
                overrides["augment"] = () if args.augment.strip() == "none" else _convert("augment", args.augment)
            try:
                cfg = build_config(args.config, overrides)
                if "crop" in cfg.augment and not args.bbox:
                    raise ConfigError("the crop augmentation needs --bbox")
                if args.jobs < 1:
                    raise ConfigError("--jobs must be at least 1")
            except (ConfigError, OSError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 2
            manifest = run_augment(cfg, args.landmarks, args.images, args.bbox, args.categories, args.jobs)
            failed = sum(r["status"] != "ok" for r in manifest)
            print(f"augmented {len(manifest) - failed} of {len(manifest)} images into {cfg.out}"
                  + (f" ({failed} failed, see manifest.jsonl)" if failed else ""))
            return 0
        if args.command == "eval":
            report = run_eval(args.pred, args.gt, args.k, args.mask, args.category_map, args.size)
            sys.stdout.write(report.to_tsv())
            return 0
        if args.command == "oracle":
            values = parse_config_text(Path(args.config).read_text()) if args.config else {}
            seed = args.seed if args.seed is not None else values.get("seed", int(os.environ.get(SEED_ENV, 0)))
            params = ElasticParams(values.get("n_s", args.n_s), values.get("alpha", args.alpha),
                                   values.get("sigma", args.sigma))
            summary = run_oracle(args.trials, args.size, params, seed, args.n or values.get("n"))
            print("\n".join(summary.lines()))
            return 1 if args.strict and not summary.passed else 0
        if args.command == "overlay":
            img = dataio.load_png(args.image)
            lms = _load_any_landmarks(args.landmarks, args.path, Path(args.image).name) if args.landmarks \
                else LandmarkSet()
            hm = np.load(args.heatmaps) if args.heatmaps else None
            dataio.save_png(render_overlay(img, lms, hm, args.color, args.alpha), args.out)
            return 0
    except (AugkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
