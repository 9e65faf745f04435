import filecmp
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from garment_augkit import cli, dataio
from garment_augkit.core import Image, Landmark, LandmarkSet, RngStream, ShapeError, Visibility
from garment_augkit.heatmap import encode_heatmaps
from garment_augkit.synthetic import SYNTHETIC_VOCABULARY, random_image, random_samples
from garment_augkit.warp import ElasticParams


def make_dataset(root: Path, n: int, width=120, height=150, seed=0):
    samples = random_samples(n, seed=seed, width=width, height=height)
    for i, s in enumerate(samples):
        path = root / "src" / s.image_path
        path.parent.mkdir(parents=True, exist_ok=True)
        dataio.save_png(random_image(RngStream(seed, i), width, height), path)
    (root / "lm.txt").write_text(dataio.format_landmark_file(samples))
    (root / "bbox.txt").write_text(dataio.format_bbox_file({s.image_path: s.bbox for s in samples}))
    (root / "cat.txt").write_text(dataio.format_category_file({s.image_path: s.category for s in samples}))
    return samples


def augment_args(root, out, *extra):
    return ["augment", "--landmarks", str(root / "lm.txt"), "--images", str(root / "src"),
            "--bbox", str(root / "bbox.txt"), "--categories", str(root / "cat.txt"), "--out", str(out), *extra]


def same_tree(a: Path, b: Path) -> bool:
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    return fa == fb and all(filecmp.cmp(a / p, b / p, shallow=False) for p in fa)


# --- config ------------------------------------------------------------------

def test_config_defaults_and_precedence(tmp_path, monkeypatch):
    cfg = cli.PipelineConfig()
    assert (cfg.alpha, cfg.sigma, cfg.n_s, cfg.target) == (500.0, 40.0, 3, 224)
    assert cfg.augment == ("crop", "rotate", "elastic")
    conf = tmp_path / "c.cfg"
    conf.write_text("# comment\nseed=5\nalpha = 20\naugment=crop,rotate\nn=auto\n")
    monkeypatch.setenv(cli.SEED_ENV, "99")
    cfg = cli.build_config(str(conf), {"alpha": 7.0, "seed": None})
    assert (cfg.seed, cfg.alpha, cfg.augment, cfg.n) == (5, 7.0, ("crop", "rotate"), None)
    conf.write_text("sigma=3\n")
    assert cli.build_config(str(conf), {}).seed == 99


@pytest.mark.parametrize("text", ["bogus=1\n", "alpha=abc\n", "augment=crop,zoom\n", "noequals\n", "sigma=0\n"])
def test_config_rejects(text):
    with pytest.raises(cli.ConfigError):
        cli.PipelineConfig(**cli.parse_config_text(text))


def test_invalid_config_exits_nonzero(tmp_path, capsys):
    make_dataset(tmp_path, 2)
    conf = tmp_path / "bad.cfg"
    conf.write_text("wat=1\n")
    assert cli.main(augment_args(tmp_path, tmp_path / "o", "--config", str(conf))) == 2
    assert not (tmp_path / "o").exists()


# --- augment -----------------------------------------------------------------

def test_augment_deterministic_trees(tmp_path):
    make_dataset(tmp_path, 6)
    args = ("--seed", "17", "--alpha", "60", "--sigma", "8", "--target", "64", "--heatmaps")
    assert cli.main(augment_args(tmp_path, tmp_path / "a", *args)) == 0
    assert cli.main(augment_args(tmp_path, tmp_path / "b", *args)) == 0
    assert cli.main(augment_args(tmp_path, tmp_path / "c", *args, "--jobs", "4")) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert same_tree(tmp_path / "a", tmp_path / "c")
    assert cli.main(augment_args(tmp_path, tmp_path / "d", "--seed", "18", *args[2:])) == 0
    assert not same_tree(tmp_path / "a", tmp_path / "d")


def test_augment_manifest(tmp_path):
    samples = make_dataset(tmp_path, 3)
    cli.main(augment_args(tmp_path, tmp_path / "o", "--seed", "3", "--target", "48"))
    rows = [json.loads(ln) for ln in (tmp_path / "o" / "manifest.jsonl").read_text().splitlines()]
    assert [r["path"] for r in rows] == [s.image_path for s in samples]
    assert all(r["status"] == "ok" and 0 <= r["theta"] < 2 * math.pi for r in rows)
    assert rows[0]["elastic"] == {"n_s": 3, "alpha": 500.0, "sigma": 40.0, "n": 50}
    assert len({r["stream_id"] for r in rows}) == 3


def test_no_augmentation_is_byte_identity(tmp_path):
    make_dataset(tmp_path, 4)
    assert cli.main(augment_args(tmp_path, tmp_path / "o", "--augment", "none")) == 0
    for p in (tmp_path / "src").rglob("*.png"):
        assert filecmp.cmp(p, tmp_path / "o" / "images" / p.relative_to(tmp_path / "src"), shallow=False)
    before = dataio.parse_landmark_file(tmp_path / "lm.txt")
    after = dataio.parse_landmark_file(tmp_path / "o" / "list_landmarks.txt")
    for a, b in zip(before, after):
        assert [lm.in_frame and (lm.x, lm.y) for _, lm in a.landmarks.present()] == \
               [lm.in_frame and (lm.x, lm.y) for _, lm in b.landmarks.present()]


def test_unreadable_image_is_soft_failure(tmp_path):
    samples = make_dataset(tmp_path, 3)
    (tmp_path / "src" / samples[1].image_path).write_bytes(b"not a png")
    assert cli.main(augment_args(tmp_path, tmp_path / "o", "--target", "32")) == 0
    rows = [json.loads(ln) for ln in (tmp_path / "o" / "manifest.jsonl").read_text().splitlines()]
    assert [r["status"] for r in rows] == ["ok", "error", "ok"]
    assert len(dataio.parse_landmark_file(tmp_path / "o" / "list_landmarks.txt")) == 2


@pytest.mark.slow
def test_hundred_images_pass_posthoc_check(tmp_path):
    make_dataset(tmp_path, 100, seed=4)
    assert cli.main(augment_args(tmp_path, tmp_path / "o", "--seed", "1", "--target", "96",
                                 "--alpha", "200", "--sigma", "16")) == 0
    assert cli.check_augmented(str(tmp_path / "o")) == []
    out = dataio.parse_landmark_file(tmp_path / "o" / "list_landmarks.txt")
    assert len(out) == 100
    assert any(lm.visibility == Visibility.OUT_OF_FRAME for s in out for _, lm in s.landmarks.present())


def test_check_augmented_flags_bad_landmark(tmp_path):
    out = tmp_path / "o"
    (out / "images").mkdir(parents=True)
    dataio.save_png(Image(np.zeros((10, 10))), out / "images" / "a.png")
    s = dataio.AnnotatedSample("a.png", LandmarkSet.from_dict({"L.Hem": Landmark(12, 3)}), "lower")
    (out / "list_landmarks.txt").write_text(dataio.format_landmark_file([s]))
    assert len(cli.check_augmented(str(out))) == 1


# --- eval --------------------------------------------------------------------

def write_records(path, samples):
    path.write_text(dataio.format_record_file(samples))
    return str(path)


def gt_fixture(n=5):
    out = []
    for i, s in enumerate(random_samples(n, seed=2, width=224, height=224)):
        lms = LandmarkSet(tuple(Landmark(10 + 20 * k + i, 30 + 5 * k) for k in range(8)))
        out.append(replace(s, landmarks=lms, clothes_type="full", bbox=None, size=None))
    return out


def test_eval_self(tmp_path, capsys):
    gt = write_records(tmp_path / "gt.txt", gt_fixture())
    assert cli.main(["eval", gt, gt, "--k", "1,3"]) == 0
    rows = [ln.split("\t") for ln in capsys.readouterr().out.splitlines()]
    assert rows[1] == ["NE"] + ["0.0000"] * 9
    assert rows[3][:3] == ["overall", "100.00", "100.00"]


def test_eval_swapped_collars(tmp_path):
    gts = gt_fixture(1)
    lm = gts[0].landmarks
    swapped = replace(gts[0], landmarks=lm.with_slot(0, lm[1]).with_slot(1, lm[0]))
    report = cli.run_eval(write_records(tmp_path / "p.txt", [swapped]), write_records(tmp_path / "g.txt", gts),
                          [1])
    assert [i for i, v in enumerate(report.per_landmark) if v] == [0, 1]


def test_eval_unmatched_paths_warned(tmp_path, capsys):
    gts = gt_fixture(3)
    cli.main(["eval", write_records(tmp_path / "p.txt", gts[:2]), write_records(tmp_path / "g.txt", gts)])
    assert "1 unmatched" in capsys.readouterr().err


def test_masked_ctu_eval(tmp_path):
    # 10 CTU-labelled samples; predictions spread mass over the 46-name vocabulary
    ctu = ["hoody", "skirt", "pants", "tshirt", "polo", "bluse", "polo-long", "tshirt-long", "hoody", "skirt"]
    g = np.random.default_rng(0)
    gts, preds, expected = [], [], []
    allowed = sorted(dataio.CTU_ALLOWED_DEEPFASHION)
    for i, name in enumerate(ctu):
        base = gt_fixture(1)[0]
        s = replace(base, image_path=f"ctu/{i}.png", category=name)
        p = g.random(46) ** 4
        # half the samples put their top mass outside the CTU subset
        if i % 2:
            p[SYNTHETIC_VOCABULARY.index("Dress")] = 10.0
        dist = dataio.CategoryDistribution(SYNTHETIC_VOCABULARY, p / p.sum())
        gts.append(s)
        preds.append(replace(s, scores=dist))
        restricted = max(allowed, key=lambda n: (dist.probabilities[SYNTHETIC_VOCABULARY.index(n)],
                                                 -SYNTHETIC_VOCABULARY.index(n)))
        expected.append(restricted in dataio.map_category(name))
    mask = tmp_path / "mask.txt"
    mask.write_text("\n".join(allowed) + "\n")
    report = cli.run_eval(write_records(tmp_path / "p.txt", preds), write_records(tmp_path / "g.txt", gts),
                          [1], str(mask), "ctu")
    assert report.overall_topk[1] == 100.0 * sum(expected) / 10
    plain = cli.run_eval(str(tmp_path / "p.txt"), str(tmp_path / "g.txt"), [1], None, "ctu")
    assert plain.overall_topk[1] <= report.overall_topk[1]


# --- oracle ------------------------------------------------------------------

def test_oracle_zero_alpha_is_exact():
    s = cli.run_oracle(params=ElasticParams(3, 0.0, 10.0))
    assert s.exact_fired == s.exact_agree == s.within == 100
    assert s.max_discrepancy == 0.0


def test_oracle_extreme_alpha_reports_out_of_frame(capsys):
    assert cli.main(["oracle", "--alpha", "10000", "--trials", "30"]) == 0
    lines = dict(ln.split("\t") for ln in capsys.readouterr().out.splitlines())
    assert int(lines["out_of_frame"]) > 0
    assert lines["trials"] == "30"


def test_oracle_strict_exit_code():
    assert cli.main(["oracle", "--alpha", "0", "--trials", "5", "--strict"]) == 0


# --- overlay -----------------------------------------------------------------

def test_overlay_without_landmarks_is_identity():
    img = random_image(RngStream(0), 20, 20)
    assert cli.render_overlay(img, LandmarkSet()) is img


def test_overlay_cross_pixels(tmp_path):
    img = Image(np.full((30, 30, 3), 0.5))
    lms = LandmarkSet.from_dict({"L.Collar": Landmark(10, 10)})
    out = cli.render_overlay(img, lms).data
    changed = set(zip(*np.nonzero(np.any(out != img.data, axis=2))))
    want = {(10, 10 + d) for d in range(-5, 6)} | {(10 + d, 10) for d in range(-5, 6)}
    assert changed == want


def test_overlay_file_probe(tmp_path):
    img = Image(np.full((40, 40, 3), 0.5))
    dataio.save_png(img, tmp_path / "in.png")
    s = dataio.AnnotatedSample("in.png", LandmarkSet.from_dict({"L.Hem": Landmark(20, 15)}), "lower")
    (tmp_path / "lm.txt").write_text(dataio.format_landmark_file([s]))
    hm = encode_heatmaps(s.landmarks, 40, 40, 4.0).maps
    np.save(tmp_path / "hm.npy", hm)
    assert cli.main(["overlay", str(tmp_path / "in.png"), "--landmarks", str(tmp_path / "lm.txt"),
                     "--heatmaps", str(tmp_path / "hm.npy"), "--color", "0,255,0",
                     "--out", str(tmp_path / "out.png")]) == 0
    px = dataio.load_png(tmp_path / "out.png").data
    assert tuple(px[15, 20]) == (0.0, 1.0, 0.0)
    assert tuple(px[0, 0]) == (128 / 255,) * 3  # the tint has vanished this far from the peak
    assert px[15, 28, 0] > px[15, 28, 1]  # red tint near the peak, off the cross


def test_overlay_size_mismatch():
    with pytest.raises(ShapeError):
        cli.render_overlay(Image(np.zeros((10, 10))), LandmarkSet(), np.zeros((8, 5, 5)))
