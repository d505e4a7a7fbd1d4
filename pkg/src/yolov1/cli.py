"""``yolov1`` command-line interface.

Data goes to files or stdout, diagnostics to stderr.  The exit status is 0
only when every item succeeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import augment as aug
from .dataset_io import (
    ClassTable, Sample, atomic_write, class_color, generate_synthetic, list_stems, parse_voc_xml,
    read_difficult, read_ppm, read_yolo_labels, save_dataset, write_ppm, write_yolo_labels,
)
from .errors import YoloError
from .evaluate import ALL_POINT, ELEVEN_POINT, EvalConfig, GroundTruth, mean_ap
from .geometry import BoxYolo, voc_to_yolo
from .loss import LossParams, yolo_loss
from .network import ArchitectureDef, builtin_architecture, builtin_names, forward, load_weights, prepare_image
from .postprocess import NmsConfig, detect
from .raster import draw_boxes, to_uint8
from .rng import RngStream, derive_seed
from .schedule import FIXED, MULTISTEP, ONECYCLE, ScheduleSpec, schedule_table
from .tensor_codec import Detection, GridConfig, TargetTensor, decode, encode


class Reporter:
    def __init__(self, quiet: bool):
        self.quiet = quiet
        self.failures = 0

    def info(self, msg: str) -> None:
        if not self.quiet:
            print(msg, file=sys.stderr)

    def error(self, msg: str) -> None:
        self.failures += 1
        print(f"error: {msg}", file=sys.stderr)


def _table(args) -> ClassTable:
    return ClassTable.from_file(args.classes) if args.classes else ClassTable.from_env()


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def detections_to_json(image: str, dets, table: ClassTable) -> dict:
    return {
        "image": image,
        "detections": [
            {
                "class": d.class_id,
                "name": table[d.class_id] if d.class_id < len(table) else str(d.class_id),
                "score": d.score,
                "cx": d.box.cx, "cy": d.box.cy, "w": d.box.w, "h": d.box.h,
            }
            for d in dets
        ],
    }


def detections_from_json(obj) -> dict[str, list[Detection]]:
    entries = obj if isinstance(obj, list) else [obj]
    out: dict[str, list[Detection]] = {}
    for entry in entries:
        dets = out.setdefault(entry["image"], [])
        for d in entry["detections"]:
            c = int(d["class"])
            dets.append(Detection(c, float(d["score"]), BoxYolo(c, d["cx"], d["cy"], d["w"], d["h"])))
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_convert(args, rep: Reporter) -> None:
    table = _table(args)
    ann_dir = Path(args.voc_dir) / "Annotations"
    if not ann_dir.is_dir():
        rep.error(f"{ann_dir} is not a directory")
        return
    n_files = n_objects = skipped = 0
    for path in sorted(ann_dir.glob("*.xml")):
        try:
            ann = parse_voc_xml(path.read_text(encoding="utf-8"), table)
            labels = [voc_to_yolo(o.bndbox, ann.width, ann.height, table.index(o.name)) for o in ann.objects]
        except (YoloError, OSError, UnicodeDecodeError) as exc:
            rep.error(f"{path.name}: {exc}")
            skipped += 1
            continue
        out = Path(args.out_dir) / "labels"
        atomic_write(out / f"{path.stem}.txt", write_yolo_labels(labels))
        if any(o.difficult for o in ann.objects):
            atomic_write(out / f"{path.stem}.difficult", "".join(f"{int(o.difficult)}\n" for o in ann.objects))
        n_files += 1
        n_objects += len(labels)
    print(f"converted {n_files} files, {n_objects} objects, {skipped} skipped(difficult retained, flagged)")


def _load_pair(root: Path, stem: str, table: ClassTable) -> Sample:
    img = read_ppm((root / "images" / f"{stem}.ppm").read_bytes())
    labels = read_yolo_labels((root / "labels" / f"{stem}.txt").read_text(encoding="utf-8"), table)
    return Sample(img, tuple(labels))


def cmd_augment(args, rep: Reporter) -> None:
    table = _table(args)
    pipeline = aug.AugmentPipeline()
    if args.config:
        pipeline = aug.parse_pipeline_config(Path(args.config).read_text(encoding="utf-8"))
    root, out = Path(args.dataset), Path(args.out)
    stems = list_stems(root, "images", ".ppm")
    labelled = set(list_stems(root, "labels", ".txt"))
    if args.n is not None:
        stems = stems[: args.n]
    for index, stem in enumerate(stems):
        if stem not in labelled:
            rep.error(f"{stem}: image has no label file, skipped")
            continue
        try:
            sample = _load_pair(root, stem, table)
        except (YoloError, OSError) as exc:
            rep.error(f"{stem}: {exc}")
            continue
        result = aug.apply_pipeline(sample, pipeline, RngStream(derive_seed(args.seed, index)))
        atomic_write(out / "images" / f"{stem}.ppm", write_ppm(result.image))
        atomic_write(out / "labels" / f"{stem}.txt", write_yolo_labels(result.labels))
        preview = draw_boxes(result.image, result.labels, class_color)
        atomic_write(out / "previews" / f"{stem}.ppm", write_ppm(preview))
    rep.info(f"augmented {len(stems)} samples")


def _arch(spec: str) -> ArchitectureDef:
    if spec in builtin_names():
        return builtin_architecture(spec)
    return ArchitectureDef.from_json(Path(spec).read_text(encoding="utf-8"))


def cmd_forward(args, rep: Reporter) -> None:
    table = _table(args)
    try:
        arch = _arch(args.arch)
        weights = load_weights(arch, Path(args.weights).read_bytes())
    except (YoloError, OSError, ValueError, KeyError) as exc:
        rep.error(f"cannot load model: {exc}")
        return
    nms_cfg = NmsConfig(iou_threshold=args.nms, conf_threshold=args.conf, max_detections=args.max_det)
    results = []
    for image_path in args.image:
        path = Path(image_path)
        try:
            img = read_ppm(path.read_bytes())
        except (YoloError, OSError) as exc:
            rep.error(f"{path}: {exc}")
            continue
        tensor = forward(arch, weights, prepare_image(arch, img))
        if args.tensor_out:
            atomic_write(Path(args.tensor_out) / f"{path.stem}.bin", tensor.to_bytes())
        dets = detect(tensor, nms_cfg)
        results.append(detections_to_json(path.stem, dets, table))
        if args.annotate:
            boxed = draw_boxes(img, [d.box for d in dets], class_color)
            atomic_write(Path(args.annotate) / f"{path.stem}.ppm", write_ppm(boxed))
    _emit(json.dumps(results, indent=1) + "\n", args.output)


def load_ground_truth(root: Path, stems, table: ClassTable) -> list[list[GroundTruth]]:
    gts = []
    for stem in stems:
        labels = read_yolo_labels((root / "labels" / f"{stem}.txt").read_text(encoding="utf-8"), table)
        flags = read_difficult(root, stem, len(labels))
        gts.append([GroundTruth(b, d) for b, d in zip(labels, flags)])
    return gts


def cmd_eval(args, rep: Reporter) -> None:
    table = _table(args)
    root = Path(args.dataset)
    by_image = detections_from_json(json.loads(Path(args.detections).read_text(encoding="utf-8")))
    stems = list_stems(root, "labels", ".txt")
    for name in sorted(set(by_image) - set(stems)):
        rep.error(f"detections for unknown image {name!r} ignored")
    gts = load_ground_truth(root, stems, table)
    dets = [by_image.get(s, []) for s in stems]
    res = mean_ap(dets, gts, EvalConfig(args.iou, args.mode), len(table))
    report = {
        "map": res.map,
        "per_class": {table[c]: ap for c, ap in res.per_class.items()},
        "mode": args.mode,
        "iou_threshold": args.iou,
    }
    _emit(json.dumps(report, indent=1) + "\n", args.output)
    if args.pr_csv:
        for c, (prec, rec) in res.curves.items():
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["rank", "precision", "recall"])
            w.writerows((i + 1, repr(float(p)), repr(float(r))) for i, (p, r) in enumerate(zip(prec, rec)))
            atomic_write(Path(args.pr_csv) / f"{table[c]}.csv", buf.getvalue())


def cmd_synth(args, rep: Reporter) -> None:
    table = _table(args)
    samples = generate_synthetic(args.seed, args.n, table, args.size, args.grid)
    save_dataset(args.out, samples)
    rep.info(f"wrote {len(samples)} samples to {args.out}")


def _grid(args) -> GridConfig:
    return GridConfig(args.S, args.B, args.C)


def cmd_encode(args, rep: Reporter) -> None:
    table = _table(args)
    labels = read_yolo_labels(Path(args.labels).read_text(encoding="utf-8"), table)
    tensor = encode(labels, _grid(args))
    atomic_write(args.out, tensor.to_bytes())


def cmd_decode(args, rep: Reporter) -> None:
    tensor = TargetTensor.from_bytes(Path(args.tensor).read_bytes())
    dets = decode(tensor, args.conf)
    _emit(write_yolo_labels(d.box for d in dets), args.output)


def cmd_loss_eval(args, rep: Reporter) -> None:
    pred = TargetTensor.from_bytes(Path(args.pred).read_bytes())
    target = TargetTensor.from_bytes(Path(args.target).read_bytes())
    res = yolo_loss(pred, target, LossParams(args.lambda_coord, args.lambda_noobj))
    _emit(json.dumps(res.as_dict()) + "\n", args.output)


def cmd_schedule(args, rep: Reporter) -> None:
    if args.kind == ONECYCLE:
        spec = ScheduleSpec.onecycle(args.lr, args.steps, args.pct_start, args.div_factor, args.final_div_factor)
    elif args.kind == MULTISTEP:
        spec = ScheduleSpec.multistep(args.lr, args.milestones, args.gamma)
    else:
        spec = ScheduleSpec.fixed(args.lr)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "lr"])
    w.writerows((s, repr(lr)) for s, lr in schedule_table(spec, args.steps))
    _emit(buf.getvalue(), args.output)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _unit(value: str) -> float:
    v = float(value)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"{value} is not in [0, 1]")
    return v


def _positive_int(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="64-bit seed (default 0)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress info messages")
    common.add_argument("--classes", default=argparse.SUPPRESS,
                        help="class table file, one name per line (default: $YOLOV1_CLASSES or VOC-20)")

    parser = argparse.ArgumentParser(prog="yolov1", description="Dataset, detection and evaluation tools for a single-shot grid detector.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, **kw):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text, **kw)
        p.set_defaults(func=func)
        return p

    def grid_flags(p):
        p.add_argument("--S", type=_positive_int, default=7)
        p.add_argument("--B", type=_positive_int, default=2)
        p.add_argument("--C", type=_positive_int, default=20)

    p = add("convert", cmd_convert, "convert a VOC Annotations/ tree to YOLO label files")
    p.add_argument("--voc-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("augment", cmd_augment, "write augmented samples plus box-annotated previews")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="pipeline settings file (key = value lines)")
    p.add_argument("--n", type=_positive_int, help="process only the first N samples")

    for name in ("forward", "detect"):
        p = add(name, cmd_forward, "run a network on PPM images and emit detections JSON")
        p.add_argument("--arch", required=True, help=f"builtin ({', '.join(builtin_names())}) or JSON file")
        p.add_argument("--weights", required=True)
        p.add_argument("--image", required=True, action="append")
        p.add_argument("--conf", type=_unit, default=0.20)
        p.add_argument("--nms", type=_unit, default=0.45)
        p.add_argument("--max-det", type=_positive_int, default=100)
        p.add_argument("--annotate", help="directory for box-annotated PPMs")
        p.add_argument("--tensor-out", help="directory for raw output tensors")
        p.add_argument("--output", "-o")

    p = add("eval", cmd_eval, "score detections JSON against a dataset's labels")
    p.add_argument("--detections", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--mode", choices=(ELEVEN_POINT, ALL_POINT), default=ELEVEN_POINT)
    p.add_argument("--pr-csv", help="directory for per-class precision/recall CSVs")
    p.add_argument("--output", "-o")

    p = add("synth", cmd_synth, "generate a synthetic rectangle dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--size", type=_positive_int, default=448)
    p.add_argument("--grid", type=_positive_int, default=7)

    p = add("encode", cmd_encode, "encode a label file into a grid tensor")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    grid_flags(p)

    p = add("decode", cmd_decode, "decode a grid tensor into a label file")
    p.add_argument("--tensor", required=True)
    p.add_argument("--conf", type=float, default=0.5)
    p.add_argument("--output", "-o")

    p = add("loss-eval", cmd_loss_eval, "evaluate the loss between two serialized tensors")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--lambda-coord", type=float, default=5.0)
    p.add_argument("--lambda-noobj", type=float, default=0.5)
    p.add_argument("--output", "-o")

    p = add("schedule", cmd_schedule, "print a learning-rate schedule as CSV")
    p.add_argument("--kind", choices=(FIXED, MULTISTEP, ONECYCLE), default=ONECYCLE)
    p.add_argument("--lr", type=float, default=0.01, help="lr, base lr or max lr depending on --kind")
    p.add_argument("--steps", type=_positive_int, required=True)
    p.add_argument("--milestones", type=int, nargs="*", default=[])
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--pct-start", type=float, default=0.3)
    p.add_argument("--div-factor", type=float, default=25.0)
    p.add_argument("--final-div-factor", type=float, default=1e4)
    p.add_argument("--output", "-o")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", 0), ("quiet", False), ("classes", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    rep = Reporter(args.quiet)
    try:
        args.func(args, rep)
    except (YoloError, OSError, ValueError) as exc:
        rep.error(str(exc))
    return 1 if rep.failures else 0


if __name__ == "__main__":
    sys.exit(main())
