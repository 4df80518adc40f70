"""Command-line surface: generate, augment, train, infer, evaluate, overlay.

Flag values may also come from a plain-text key-value config file
(``--config``); explicit flags win. ``CTRKIT_LOG`` sets the log level
(DEBUG/INFO/WARNING/ERROR). Exit codes: 0 success, 1 usage error, 2 data
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import augment as aug
from . import evaluation, ingest, phantom, postproc
from .core import BoundingBox, CtrError, MaskPair, compute_ctr
from .segnet import (
    AttentionUNet,
    NetConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history,
)

log = logging.getLogger("ctrkit")

CAPTION_HEIGHT = 28
ANNOTATED_COLOR = (255, 0, 0)  # red
PREDICTED_COLOR = (255, 255, 0)  # yellow


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Opt:
    """One resolvable option: CLI flag, config-file key, typed default."""

    name: str
    type: type | object
    default: object
    help: str = ""
    required: bool = False


COMMON_OPTS = [Opt("config", str, None, "plain-text key=value config file")]

COMMANDS: dict[str, list[Opt]] = {
    "generate": [
        Opt("n", int, None, "number of phantoms", required=True),
        Opt("size", int, 64, "square image size, pixels"),
        Opt("ctr-low", float, 0.35, "lower end of the analytic CTR range"),
        Opt("ctr-high", float, 0.65, "upper end of the analytic CTR range"),
        Opt("split-fractions", str, "0.8,0.1,0.1", "train,val,test fractions"),
        Opt("seed", int, 0, "RNG seed"),
        Opt("out-dir", str, None, "output directory", required=True),
    ],
    "augment": [
        Opt("manifest", str, None, "source manifest", required=True),
        Opt("fraction", float, 0.75, "upsampling fraction (0, 1]"),
        Opt("split", str, "all", "restrict sources to one split, or 'all'"),
        Opt("seed", int, 0, "RNG seed"),
        Opt("out-dir", str, None, "output directory", required=True),
    ],
    "train": [
        Opt("manifest", str, None, "manifest path(s), comma-separated", required=True),
        Opt("image-size", int, 64, "network input size"),
        Opt("base-channels", int, 8, "channels at the first encoder level"),
        Opt("depth", int, 3, "encoder levels"),
        Opt("attention", _parse_bool, True, "use attention-gated skips"),
        Opt("learning-rate", float, 3e-3, "Adam learning rate"),
        Opt("epochs", int, 30, "training epochs"),
        Opt("batch-size", int, 8, "minibatch size"),
        Opt("patience", int, 3, "plateau patience, epochs"),
        Opt("factor", float, 0.5, "plateau learning-rate factor"),
        Opt("min-lr", float, 1e-5, "learning-rate floor"),
        Opt("seed", int, 0, "RNG seed"),
        Opt("out-dir", str, None, "output directory", required=True),
    ],
    "infer": [
        Opt("manifest", str, None, "manifest of images to process", required=True),
        Opt("checkpoint", str, None, "trained checkpoint (.npz)"),
        Opt("use-gt-masks", _parse_bool, False, "skip the network, feed stored masks"),
        Opt("split", str, "test", "which split to process, or 'all'"),
        Opt("threshold", float, 0.5, "probability threshold"),
        Opt("erosion-iters", int, None, "erosions (default 2, or 0 with --use-gt-masks)"),
        Opt("dilation-iters", int, None, "dilations (default 1, or 0 with --use-gt-masks)"),
        Opt("element", str, "square3", "structuring element: square3 | cross3"),
        Opt("save-masks", _parse_bool, False, "also write cleaned mask PNGs"),
        Opt("out-dir", str, None, "output directory", required=True),
    ],
    "evaluate": [
        Opt("predictions", str, None, "records.jsonl from infer", required=True),
        Opt("manifest", str, None, "manifest with reference CTR values"),
        Opt("annotations", str, None, "VIA JSON with heart/thorax rects"),
        Opt("out-dir", str, None, "output directory", required=True),
    ],
    "overlay": [
        Opt("image", str, None, "input image (PNG/PGM)", required=True),
        Opt("annotated-heart", str, None, "x0,y0,x1,y1", required=True),
        Opt("annotated-thorax", str, None, "x0,y0,x1,y1", required=True),
        Opt("predicted-heart", str, None, "x0,y0,x1,y1"),
        Opt("predicted-thorax", str, None, "x0,y0,x1,y1"),
        Opt("out", str, None, "output PNG", required=True),
    ],
}


def build_parser() -> _Parser:
    parser = _Parser(prog="ctrkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, help=f"{name} step")
        for opt in COMMON_OPTS + opts:
            p.add_argument(f"--{opt.name}", dest=_dest(opt.name), default=None, help=opt.help)
    return parser


def _dest(name: str) -> str:
    return name.replace("-", "_")


def read_config_file(path) -> dict[str, str]:
    """key = value lines; '#' starts a comment; blank lines ignored."""
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as f:
            for line_no, raw in enumerate(f, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{line_no}: expected 'key = value'")
                key, value = line.split("=", 1)
                values[_dest(key.strip())] = value.strip()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    return values


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge flag values over config-file values over defaults."""
    opts = {o.name: o for o in COMMANDS[command]}
    file_values: dict[str, str] = {}
    if args.config is not None:
        file_values = read_config_file(args.config)
        known = {_dest(n) for n in opts}
        unknown = set(file_values) - known
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    resolved = {}
    for name, opt in opts.items():
        dest = _dest(name)
        raw = getattr(args, dest)
        if raw is None and dest in file_values:
            raw = file_values[dest]
        if raw is None:
            if opt.required:
                raise UsageError(f"ctrkit {command}: --{name} is required")
            resolved[dest] = opt.default
        else:
            try:
                resolved[dest] = opt.type(raw)
            except (TypeError, ValueError) as e:
                raise UsageError(f"ctrkit {command}: bad value for --{name}: {raw!r}") from e
    log.info("resolved %s config: %s", command, json.dumps(resolved, sort_keys=True, default=str))
    return resolved


# ------------------------------------------------------------- helpers


def _load_rows(manifest_path, split="all"):
    rows = ingest.read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for row in rows:
        if split != "all" and row.get("split", "train") != split:
            continue
        out.append((row, base))
    return out


def _row_image(row, base):
    return ingest.load_image(os.path.join(base, row["image"]))


def _row_masks(row, base):
    heart = ingest.load_mask(os.path.join(base, row["heart_mask"]))
    thorax = ingest.load_mask(os.path.join(base, row["thorax_mask"]))
    return heart, thorax


def _parse_fractions(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated fractions, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as e:
        raise UsageError(f"bad fractions {text!r}") from e


def _parse_box(text: str, flag: str) -> BoundingBox:
    try:
        x0, y0, x1, y1 = (int(p) for p in text.split(","))
    except ValueError as e:
        raise UsageError(f"--{flag}: expected x0,y0,x1,y1, got {text!r}") from e
    if x0 > x1 or y0 > y1:
        raise UsageError(f"--{flag}: box corners out of order in {text!r}")
    return BoundingBox(x_min=x0, y_min=y0, x_max=x1, y_max=y1)


def _write_text(path, text: str) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


# ------------------------------------------------------------ commands


def cmd_generate(o) -> int:
    if o["n"] < 2:
        raise UsageError("--n must be at least 2")
    if not 0.0 < o["ctr_low"] < o["ctr_high"] < 1.0:
        raise UsageError("--ctr-low/--ctr-high must satisfy 0 < low < high < 1")
    fractions = _parse_fractions(o["split_fractions"])
    samples = phantom.generate_dataset(
        o["n"], ctr_range=(o["ctr_low"], o["ctr_high"]), seed=o["seed"], image_size=o["size"]
    )
    ids = [f"phantom_{i:05d}" for i in range(len(samples))]
    labels = {i: s.label for i, s in zip(ids, samples)}
    splits = ingest.split(
        ids, fractions=fractions, seed=o["seed"], stratify_by_label=True, labels=labels
    ).as_dict()
    os.makedirs(o["out_dir"], exist_ok=True)
    rows = phantom.write_dataset(samples, o["out_dir"], splits=splits)
    n_pos = sum(r["label"] for r in rows)
    print(
        f"wrote {len(rows)} phantoms ({n_pos} positive / {len(rows) - n_pos} negative) "
        f"to {o['out_dir']}"
    )
    return 0


def cmd_augment(o) -> int:
    if o["fraction"] is None or o["fraction"] <= 0 or o["fraction"] > 1:
        raise UsageError("--fraction must be in (0, 1]")
    sources = _load_rows(o["manifest"], o["split"])
    if not sources:
        raise CtrError(f"no rows in {o['manifest']} for split {o['split']!r}")
    loaded = []
    for row, base in sources:
        heart, thorax = _row_masks(row, base)
        loaded.append((_row_image(row, base), heart, thorax, row))

    samples = [(img, _mask_pair(h, t)) for img, h, t, _ in loaded]
    augmented = aug.upsample_dataset(samples, o["fraction"], seed=o["seed"])

    out_dir = o["out_dir"]
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    rows_out = []
    skipped = 0
    for k, a in enumerate(augmented):
        src_row = loaded[a.source_index][3]
        sid = f"{src_row['id']}_aug_{k:05d}"
        try:
            heart_box = postproc.extract_box(a.masks.heart, "heart")
            thorax_box = postproc.extract_box(a.masks.thorax, "thorax")
        except postproc.EmptyMask:
            skipped += 1
            log.warning("augmented sample %s lost a structure; skipped", sid)
            continue
        ctr = compute_ctr(heart_box, thorax_box).ctr
        image_path = os.path.join("images", f"{sid}.png")
        heart_path = os.path.join("masks", f"{sid}_heart.png")
        thorax_path = os.path.join("masks", f"{sid}_thorax.png")
        ingest.save_image(a.image, os.path.join(out_dir, image_path))
        ingest.save_mask(a.masks.heart, os.path.join(out_dir, heart_path))
        ingest.save_mask(a.masks.thorax, os.path.join(out_dir, thorax_path))
        rows_out.append(
            {
                "id": sid,
                "image": image_path,
                "heart_mask": heart_path,
                "thorax_mask": thorax_path,
                "ctr": ctr,
                "label": int(ctr > 0.5),
                "split": src_row.get("split", "train"),
                "provenance": {
                    "source": src_row["id"],
                    "ops": a.plan.describe(),
                    "seed": a.plan.seed,
                },
            }
        )
    ingest.write_manifest(rows_out, os.path.join(out_dir, "manifest.jsonl"))
    print(f"wrote {len(rows_out)} augmented samples to {out_dir} (skipped {skipped})")
    return 0


def _mask_pair(heart, thorax):
    return MaskPair(heart=heart, thorax=thorax)


def _stack_split(rows, size):
    images, targets = [], []
    for row, base in rows:
        img = _row_image(row, base)
        heart, thorax = _row_masks(row, base)
        if img.shape != (size, size):
            img = ingest.resize_image(img, size)
            heart = ingest.resize_mask(heart, size)
            thorax = ingest.resize_mask(thorax, size)
        images.append(img[None, :, :])
        targets.append(np.stack([heart, thorax]).astype(np.float64))
    if not images:
        return np.zeros((0, 1, size, size)), np.zeros((0, 2, size, size))
    return np.stack(images), np.stack(targets)


def cmd_train(o) -> int:
    rows = []
    for path in o["manifest"].split(","):
        rows.extend(_load_rows(path.strip(), "all"))
    train_rows = [(r, b) for r, b in rows if r.get("split", "train") == "train"]
    val_rows = [(r, b) for r, b in rows if r.get("split") == "validation"]
    size = o["image_size"]
    train_data = _stack_split(train_rows, size)
    val_data = _stack_split(val_rows, size)

    net_config = NetConfig(
        input_size=size,
        base_channels=o["base_channels"],
        depth=o["depth"],
        attention_gate=o["attention"],
    )
    train_config = TrainConfig(
        learning_rate=o["learning_rate"],
        plateau_patience=o["patience"],
        plateau_factor=o["factor"],
        min_lr=o["min_lr"],
        epochs=o["epochs"],
        batch_size=o["batch_size"],
        seed=o["seed"],
    )
    checkpoint, history = train(train_data, val_data, net_config, train_config)
    os.makedirs(o["out_dir"], exist_ok=True)
    save_checkpoint(checkpoint, os.path.join(o["out_dir"], "checkpoint.npz"))
    write_history(history, os.path.join(o["out_dir"], "history.csv"))
    print(
        f"trained {len(history)} epochs on {train_data[0].shape[0]} samples; "
        f"best val loss {checkpoint.val_loss:.6f} at epoch {checkpoint.epoch}"
    )
    return 0


def _morph_config(o) -> postproc.MorphConfig:
    try:
        element = postproc.StructuringElement(o["element"].lower())
    except ValueError as e:
        raise UsageError(f"--element must be square3 or cross3, got {o['element']!r}") from e
    defaults = (0, 0) if o["use_gt_masks"] else (2, 1)
    erosion = o["erosion_iters"] if o["erosion_iters"] is not None else defaults[0]
    dilation = o["dilation_iters"] if o["dilation_iters"] is not None else defaults[1]
    return postproc.MorphConfig(
        threshold=o["threshold"],
        erosion_iters=erosion,
        dilation_iters=dilation,
        element=element,
    )


def cmd_infer(o) -> int:
    rows = _load_rows(o["manifest"], o["split"])
    if not rows:
        raise CtrError(f"no rows in {o['manifest']} for split {o['split']!r}")
    config = _morph_config(o)

    model = params = net_config = None
    if not o["use_gt_masks"]:
        if not o["checkpoint"]:
            raise UsageError("--checkpoint is required unless --use-gt-masks is set")
        ckpt = load_checkpoint(o["checkpoint"])
        net_config = ckpt.net_config
        model = AttentionUNet(net_config)
        params = ckpt.params

    os.makedirs(o["out_dir"], exist_ok=True)
    mask_dir = os.path.join(o["out_dir"], "pred_masks")
    if o["save_masks"]:
        os.makedirs(mask_dir, exist_ok=True)

    records = []
    failures = 0
    for row, base in rows:
        if o["use_gt_masks"]:
            heart, thorax = _row_masks(row, base)
            prob = np.stack([heart, thorax]).astype(np.float64)
        else:
            img = _row_image(row, base)
            if img.shape != (net_config.input_size, net_config.input_size):
                img = ingest.resize_image(img, net_config.input_size)
            prob = model.forward(params, img[None, None, :, :])[0]
        record = {"id": row["id"]}
        try:
            heart_box = postproc.mask_to_box(prob[0], config, "heart")
            thorax_box = postproc.mask_to_box(prob[1], config, "thorax")
            m = compute_ctr(heart_box, thorax_box)
            record.update(
                heart_box=list(heart_box.as_tuple()),
                thorax_box=list(thorax_box.as_tuple()),
                wh=m.heart_width,
                wt=m.thorax_width,
                ctr=m.ctr,
                category=m.category.value,
                failure=None,
            )
        except postproc.EmptyMask as e:
            failures += 1
            record.update(
                heart_box=None, thorax_box=None, wh=None, wt=None,
                ctr=None, category=None, failure=e.structure,
            )
        if o["save_masks"]:
            for ch, name in ((0, "heart"), (1, "thorax")):
                mask = postproc.cleanup(prob[ch], config)
                ingest.save_mask(mask, os.path.join(mask_dir, f"{row['id']}_{name}.png"))
        records.append(record)
    ingest.write_manifest(records, os.path.join(o["out_dir"], "records.jsonl"))
    print(f"inferred {len(records)} images, {failures} detection failures")
    return 0


def cmd_evaluate(o) -> int:
    if (o["manifest"] is None) == (o["annotations"] is None):
        raise UsageError("provide exactly one of --manifest or --annotations")
    predictions = {r["id"]: r for r in ingest.read_manifest(o["predictions"])}

    if o["manifest"] is not None:
        annotated = {r["id"]: float(r["ctr"]) for r, _ in _load_rows(o["manifest"], "all")}
    else:
        with open(o["annotations"], encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise ingest.MalformedDocument(f"{o['annotations']}: invalid JSON") from e
        annotated = {a.image_id: a.annotated_ctr for a in ingest.parse_via(doc)}

    pairs = []
    for image_id, pred in predictions.items():
        if image_id not in annotated:
            raise CtrError(f"prediction {image_id!r} has no reference annotation")
        pairs.append(
            evaluation.EvalPair(
                image_id=image_id,
                annotated_ctr=annotated[image_id],
                predicted_ctr=pred["ctr"],
            )
        )
    report = evaluation.build_report(pairs)
    os.makedirs(o["out_dir"], exist_ok=True)
    evaluation.write_report(
        report,
        os.path.join(o["out_dir"], "report.txt"),
        os.path.join(o["out_dir"], "scatter.csv"),
    )
    sys.stdout.write(evaluation.report_text(report))
    return 0


def cmd_overlay(o) -> int:
    img = ingest.load_image(o["image"])
    annotated = (
        _parse_box(o["annotated_heart"], "annotated-heart"),
        _parse_box(o["annotated_thorax"], "annotated-thorax"),
    )
    predicted = None
    if (o["predicted_heart"] is None) != (o["predicted_thorax"] is None):
        raise UsageError("provide both --predicted-heart and --predicted-thorax, or neither")
    if o["predicted_heart"] is not None:
        predicted = (
            _parse_box(o["predicted_heart"], "predicted-heart"),
            _parse_box(o["predicted_thorax"], "predicted-thorax"),
        )
    canvas = render_overlay(img, annotated, predicted)
    tmp = o["out"] + ".tmp"
    canvas.save(tmp, format="PNG")
    os.replace(tmp, o["out"])
    print(f"wrote overlay to {o['out']}")
    return 0


def render_overlay(img, annotated, predicted) -> Image.Image:
    """Gray image + red annotated boxes, yellow predicted boxes, and a
    caption strip below with the CTR values."""
    h, w = img.shape
    base = Image.fromarray(np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8), "L").convert("RGB")
    canvas = Image.new("RGB", (w, h + CAPTION_HEIGHT), (0, 0, 0))
    canvas.paste(base, (0, 0))
    draw = ImageDraw.Draw(canvas)
    for box in annotated:
        draw.rectangle(box.as_tuple(), outline=ANNOTATED_COLOR, width=1)
    m_ann = compute_ctr(*annotated)
    caption = f"annotated CTR {m_ann.ctr:.4f} ({m_ann.category.value})"
    if predicted is not None:
        for box in predicted:
            draw.rectangle(box.as_tuple(), outline=PREDICTED_COLOR, width=1)
        m_pred = compute_ctr(*predicted)
        caption += f" | predicted CTR {m_pred.ctr:.4f} ({m_pred.category.value})"
    else:
        caption += " | predicted: none"
    font = ImageFont.load_default()
    draw.text((2, h + 4), caption, fill=(255, 255, 255), font=font)
    return canvas


DISPATCH = {
    "generate": cmd_generate,
    "augment": cmd_augment,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "overlay": cmd_overlay,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CTRKIT_LOG", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("ctrkit: a subcommand is required (see --help)")
        resolved = resolve_options(args.command, args)
        return DISPATCH[args.command](resolved)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (CtrError, OSError) as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - defensive
        log.exception("internal error")
        return 3


if __name__ == "__main__":
    sys.exit(main())
