import json

import numpy as np
import pytest
from PIL import Image

from ctrkit import ingest
from ctrkit.cli import main


def run(args):
    return main([str(a) for a in args])


def read_manifest(path):
    return ingest.read_manifest(path)


def all_file_bytes(root):
    return {
        p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


def generate(tmp_path, name="data", n=10, seed=0, size=32, extra=()):
    out = tmp_path / name
    code = run(
        ["generate", "--n", n, "--size", size, "--seed", seed, "--out-dir", out, *extra]
    )
    assert code == 0
    return out


# ------------------------------------------------------------ generate


def test_generate_writes_half_positive_manifest(tmp_path, capsys):
    out = generate(tmp_path)
    rows = read_manifest(out / "manifest.jsonl")
    assert len(rows) == 10
    assert sum(r["label"] for r in rows) == 5
    assert "10 phantoms" in capsys.readouterr().out


def test_generate_reproducible_bytes(tmp_path):
    a = generate(tmp_path, "a", seed=4)
    b = generate(tmp_path, "b", seed=4)
    assert all_file_bytes(a) == all_file_bytes(b)


def test_generate_zero_count_is_usage_error(tmp_path):
    assert run(["generate", "--n", 0, "--out-dir", tmp_path / "x"]) == 1


def test_generate_requires_out_dir():
    assert run(["generate", "--n", 4]) == 1


def test_generate_bad_flag_value(tmp_path):
    assert run(["generate", "--n", "ten", "--out-dir", tmp_path / "x"]) == 1


def test_missing_subcommand_is_usage_error():
    assert run([]) == 1


# ------------------------------------------------------------- augment


def test_augment_counts_and_determinism(tmp_path):
    src = generate(tmp_path, "src", n=4, seed=1)
    outs = []
    for name in ("aug1", "aug2"):
        out = tmp_path / name
        assert run(
            ["augment", "--manifest", src / "manifest.jsonl", "--fraction", 0.75,
             "--seed", 3, "--out-dir", out]
        ) == 0
        rows = read_manifest(out / "manifest.jsonl")
        assert len(rows) == 3
        for r in rows:
            assert r["provenance"]["ops"]
            assert (out / r["image"]).exists()
        outs.append(all_file_bytes(out))
    assert outs[0] == outs[1]


def test_augment_zero_fraction_rejected(tmp_path):
    src = generate(tmp_path, "src", n=4)
    assert run(
        ["augment", "--manifest", src / "manifest.jsonl", "--fraction", 0, "--out-dir", tmp_path / "a"]
    ) == 1


def test_augment_missing_manifest_is_data_error(tmp_path):
    assert run(
        ["augment", "--manifest", tmp_path / "nope.jsonl", "--fraction", 0.5, "--out-dir", tmp_path / "a"]
    ) == 2


# ------------------------------------------------------- train + infer


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    data = generate(tmp, "data", n=16, seed=2, extra=["--split-fractions", "0.5,0.25,0.25"])
    out = tmp / "run"
    code = run(
        ["train", "--manifest", data / "manifest.jsonl", "--image-size", 32,
         "--base-channels", 4, "--depth", 2, "--epochs", 2, "--batch-size", 4,
         "--seed", 0, "--out-dir", out]
    )
    assert code == 0
    return data, out


def test_train_outputs(trained):
    _, out = trained
    assert (out / "checkpoint.npz").exists()
    lines = (out / "history.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert len(lines) == 3  # header + 2 epochs
    from ctrkit.segnet import load_checkpoint

    ckpt = load_checkpoint(out / "checkpoint.npz")
    val_losses = [float(line.split(",")[2]) for line in lines[1:]]
    assert ckpt.val_loss == min(val_losses)


def test_infer_with_network(trained, tmp_path):
    data, run_dir = trained
    out = tmp_path / "pred"
    assert run(
        ["infer", "--manifest", data / "manifest.jsonl", "--checkpoint",
         run_dir / "checkpoint.npz", "--split", "test", "--out-dir", out]
    ) == 0
    records = read_manifest(out / "records.jsonl")
    assert records
    for r in records:
        assert set(r) >= {"id", "wh", "wt", "ctr", "category", "failure"}


def test_infer_gt_passthrough_recovers_analytic_ctr(tmp_path, capsys):
    data = generate(tmp_path, "d", n=8, seed=5)
    out = tmp_path / "pred"
    assert run(
        ["infer", "--manifest", data / "manifest.jsonl", "--use-gt-masks", "true",
         "--split", "all", "--out-dir", out]
    ) == 0
    records = {r["id"]: r for r in read_manifest(out / "records.jsonl")}
    rows = {r["id"]: r for r in read_manifest(data / "manifest.jsonl")}
    assert len(records) == 8
    for rid, rec in records.items():
        assert rec["failure"] is None
        assert rec["ctr"] == pytest.approx(rows[rid]["ctr"], abs=2.0 / rec["wt"])
    assert "0 detection failures" in capsys.readouterr().out


def test_infer_detection_failure_still_exits_zero(tmp_path, capsys):
    data = generate(tmp_path, "d", n=4, seed=6)
    rows = read_manifest(data / "manifest.jsonl")
    blank = np.zeros((32, 32), dtype=np.uint8)
    Image.fromarray(blank, "L").save(data / rows[0]["heart_mask"])
    out = tmp_path / "pred"
    assert run(
        ["infer", "--manifest", data / "manifest.jsonl", "--use-gt-masks", "true",
         "--split", "all", "--out-dir", out]
    ) == 0
    records = read_manifest(out / "records.jsonl")
    failed = [r for r in records if r["failure"]]
    assert len(failed) == 1 and failed[0]["failure"] == "heart"
    assert "1 detection failures" in capsys.readouterr().out


def test_infer_saves_masks_on_request(tmp_path):
    data = generate(tmp_path, "d", n=4, seed=8)
    out = tmp_path / "pred"
    assert run(
        ["infer", "--manifest", data / "manifest.jsonl", "--use-gt-masks", "yes",
         "--split", "all", "--save-masks", "true", "--out-dir", out]
    ) == 0
    rows = read_manifest(data / "manifest.jsonl")
    assert (out / "pred_masks" / f"{rows[0]['id']}_heart.png").exists()


def test_infer_requires_checkpoint_without_gt_mode(tmp_path):
    data = generate(tmp_path, "d", n=4, seed=9)
    assert run(
        ["infer", "--manifest", data / "manifest.jsonl", "--split", "all",
         "--out-dir", tmp_path / "p"]
    ) == 1


def test_infer_element_flag(tmp_path):
    data = generate(tmp_path, "d", n=4, seed=11)
    out = tmp_path / "pred"
    assert run(
        ["infer", "--manifest", data / "manifest.jsonl", "--use-gt-masks", "true",
         "--split", "all", "--element", "cross3", "--erosion-iters", 1,
         "--dilation-iters", 1, "--out-dir", out]
    ) == 0
    assert run(
        ["infer", "--manifest", data / "manifest.jsonl", "--use-gt-masks", "true",
         "--split", "all", "--element", "diamond9", "--out-dir", out]
    ) == 1


# ------------------------------------------------------------ evaluate


def test_evaluate_perfect_predictions(tmp_path, capsys):
    data = generate(tmp_path, "d", n=8, seed=10)
    pred = tmp_path / "pred"
    run(["infer", "--manifest", data / "manifest.jsonl", "--use-gt-masks", "1",
         "--split", "all", "--out-dir", pred])
    out = tmp_path / "eval"
    assert run(
        ["evaluate", "--predictions", pred / "records.jsonl",
         "--manifest", data / "manifest.jsonl", "--out-dir", out]
    ) == 0
    text = (out / "report.txt").read_text()
    assert "sensitivity = 1.0000" in text
    assert "specificity = 1.0000" in text
    assert "mae = 0.0000" in text
    assert "failures = 0" in text
    assert (out / "scatter.csv").read_text().startswith(
        "id,annotated_ctr,predicted_ctr,annotated_label,predicted_label,abs_error"
    )
    assert "sensitivity = 1.0000" in capsys.readouterr().out


def test_evaluate_hand_case(tmp_path):
    preds = [
        {"id": "a", "ctr": 0.6},
        {"id": "b", "ctr": 0.6},
        {"id": "c", "ctr": 0.4},
        {"id": "d", "ctr": 0.4},
    ]
    rows = [
        {"id": "a", "ctr": 0.6},
        {"id": "b", "ctr": 0.4},
        {"id": "c", "ctr": 0.6},
        {"id": "d", "ctr": 0.4},
    ]
    ingest.write_manifest(preds, tmp_path / "pred.jsonl")
    ingest.write_manifest(rows, tmp_path / "manifest.jsonl")
    out = tmp_path / "eval"
    assert run(
        ["evaluate", "--predictions", tmp_path / "pred.jsonl",
         "--manifest", tmp_path / "manifest.jsonl", "--out-dir", out]
    ) == 0
    text = (out / "report.txt").read_text()
    for line in ("tp = 1", "fp = 1", "tn = 1", "fn = 1",
                 "sensitivity = 0.5000", "specificity = 0.5000", "f1 = 0.5000"):
        assert line in text


def test_evaluate_with_via_annotations(tmp_path):
    doc = {
        "x.png-1": {
            "filename": "x.png",
            "size": -1,
            "regions": [
                {"shape_attributes": {"name": "rect", "x": 0, "y": 0, "width": 60, "height": 30},
                 "region_attributes": {"label": "heart"}},
                {"shape_attributes": {"name": "rect", "x": 0, "y": 0, "width": 100, "height": 80},
                 "region_attributes": {"label": "thorax"}},
            ],
            "file_attributes": {},
        }
    }
    (tmp_path / "via.json").write_text(json.dumps(doc))
    ingest.write_manifest([{"id": "x.png", "ctr": 0.61}], tmp_path / "pred.jsonl")
    out = tmp_path / "eval"
    assert run(
        ["evaluate", "--predictions", tmp_path / "pred.jsonl",
         "--annotations", tmp_path / "via.json", "--out-dir", out]
    ) == 0
    assert "tp = 1" in (out / "report.txt").read_text()


def test_evaluate_needs_exactly_one_reference(tmp_path):
    ingest.write_manifest([{"id": "a", "ctr": 0.5}], tmp_path / "p.jsonl")
    assert run(["evaluate", "--predictions", tmp_path / "p.jsonl", "--out-dir", tmp_path / "e"]) == 1


def test_evaluate_missing_file_is_data_error(tmp_path):
    ingest.write_manifest([{"id": "a", "ctr": 0.5}], tmp_path / "p.jsonl")
    assert run(
        ["evaluate", "--predictions", tmp_path / "p.jsonl",
         "--manifest", tmp_path / "missing.jsonl", "--out-dir", tmp_path / "e"]
    ) == 2


# ------------------------------------------------------------- overlay


def overlay_args(tmp_path, with_pred=True):
    img = np.full((40, 40), 0.2)
    ingest.save_image(img, tmp_path / "img.png")
    args = [
        "overlay", "--image", tmp_path / "img.png",
        "--annotated-heart", "10,12,20,25", "--annotated-thorax", "5,8,35,30",
        "--out", tmp_path / "overlay.png",
    ]
    if with_pred:
        args += ["--predicted-heart", "11,12,21,25", "--predicted-thorax", "6,8,34,30"]
    return args


def test_overlay_draws_both_sets(tmp_path):
    assert run(overlay_args(tmp_path)) == 0
    arr = np.asarray(Image.open(tmp_path / "overlay.png").convert("RGB"))
    assert arr.shape == (40 + 28, 40, 3)  # caption strip below
    red = (arr[:, :, 0] > 200) & (arr[:, :, 1] < 60) & (arr[:, :, 2] < 60)
    yellow = (arr[:, :, 0] > 200) & (arr[:, :, 1] > 200) & (arr[:, :, 2] < 60)
    assert red.any() and yellow.any()


def test_overlay_without_prediction_has_no_yellow(tmp_path):
    assert run(overlay_args(tmp_path, with_pred=False)) == 0
    arr = np.asarray(Image.open(tmp_path / "overlay.png").convert("RGB"))
    yellow = (arr[:, :, 0] > 200) & (arr[:, :, 1] > 200) & (arr[:, :, 2] < 60)
    assert not yellow[:40].any()


def test_overlay_needs_both_predicted_boxes(tmp_path):
    args = overlay_args(tmp_path, with_pred=False) + ["--predicted-heart", "1,1,5,5"]
    assert run(args) == 1


def test_overlay_rejects_malformed_box(tmp_path):
    args = overlay_args(tmp_path, with_pred=False)
    args[args.index("10,12,20,25")] = "20,12,10,25"  # x0 > x1
    assert run(args) == 1


# ------------------------------------------------------ config handling


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("n = 4\nseed = 9\nsize = 32\n# comment\n")
    out = tmp_path / "out"
    assert run(["generate", "--config", cfg, "--out-dir", out]) == 0
    assert len(read_manifest(out / "manifest.jsonl")) == 4


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("n = 4\nsize = 32\n")
    out = tmp_path / "out"
    assert run(["generate", "--config", cfg, "--n", 6, "--out-dir", out]) == 0
    assert len(read_manifest(out / "manifest.jsonl")) == 6


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("bogus = 1\n")
    assert run(["generate", "--config", cfg, "--n", 4, "--out-dir", tmp_path / "o"]) == 1
