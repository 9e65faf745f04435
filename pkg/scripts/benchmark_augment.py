"""Time single-threaded rotate + elastic + landmark inversion on synthetic 224x224 images."""
import argparse
import statistics
import tempfile
import time
from pathlib import Path

from garment_augkit import dataio
from garment_augkit.cli import PipelineConfig, run_augment
from garment_augkit.core import RngStream
from garment_augkit.synthetic import random_image, random_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--size", type=int, default=224)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        samples = random_samples(args.count, seed=7, width=args.size, height=args.size)
        for i, s in enumerate(samples):
            dest = root / "src" / s.image_path
            dest.parent.mkdir(parents=True, exist_ok=True)
            dataio.save_png(random_image(RngStream(7, i), args.size, args.size), dest)
        (root / "lm.txt").write_text(dataio.format_landmark_file(samples))
        times = []
        for r in range(args.repeats):
            cfg = PipelineConfig(seed=r, augment=("rotate", "elastic"), out=str(root / f"out{r}"))
            t0 = time.perf_counter()
            run_augment(cfg, str(root / "lm.txt"), str(root / "src"), jobs=args.jobs)
            times.append(time.perf_counter() - t0)
    print(f"{args.count} images at {args.size}x{args.size}, jobs={args.jobs}: "
          f"median {statistics.median(times):.2f} s, min {min(times):.2f} s over {args.repeats} runs "
          f"({args.count / min(times):.1f} images/s)")


if __name__ == "__main__":
    main()
