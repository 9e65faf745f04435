"""Write a seeded synthetic dataset in the three-file annotation format plus PNG images.

    python scripts/make_synthetic_dataset.py out/synth --count 100 --size 300,400
"""
import argparse
from pathlib import Path

from garment_augkit import dataio
from garment_augkit.core import RngStream
from garment_augkit.synthetic import random_image, random_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--size", default="300,400", help="W,H")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    w, h = (int(v) for v in args.size.split(","))
    root = Path(args.out)
    samples = random_samples(args.count, seed=args.seed, width=w, height=h)
    for i, s in enumerate(samples):
        dest = root / "images" / s.image_path
        dest.parent.mkdir(parents=True, exist_ok=True)
        dataio.save_png(random_image(RngStream(args.seed, i), w, h), dest)
    (root / "list_landmarks.txt").write_text(dataio.format_landmark_file(samples))
    (root / "list_bbox.txt").write_text(dataio.format_bbox_file({s.image_path: s.bbox for s in samples}))
    (root / "list_category.txt").write_text(
        dataio.format_category_file({s.image_path: s.category for s in samples}))
    (root / "records.txt").write_text(dataio.format_record_file(samples))
    print(f"wrote {len(samples)} samples to {root}")


if __name__ == "__main__":
    main()
