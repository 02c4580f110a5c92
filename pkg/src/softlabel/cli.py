"""Command line interface.

Exit codes: 0 success, 2 malformed input, 3 configuration error. Set
``SOFTLABEL_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import annotations as aio
from .errors import BadConfig, InputError, SoftLabelError
from .harness import ExperimentConfig, Report, aggregate_deltas, emit_report, run_experiment
from .metrics import ap_at_iou, map_summary
from .pipeline import SoftLabelConfig, generate_soft_dataset
from .simulator import NoiseModel, simulate_detections
from .tools import SplitSpec, dataset_stats, render_overlay, split_dataset, synth_dataset

log = logging.getLogger("softlabel")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 2, 3


def _emit(text: str, out) -> None:
    if out:
        aio.write_text_atomic(out, text)
    else:
        sys.stdout.write(text)


def _summary_dict(s, extra_ap=None, extra_iou=None) -> dict:
    per_cat = {}
    for c in sorted(s.ap50):
        d = {
            "n_truths": s.n_truths[c],
            "ap50": s.ap50[c],
            "ap5095": s.ap5095[c],
            "precision": s.precision[c],
            "recall": s.recall[c],
        }
        if extra_ap is not None:
            d[f"ap@{extra_iou:g}"] = extra_ap[c]
        per_cat[s.category_names[c]] = d
    return {
        "map50": s.map50,
        "map5095": s.map5095,
        "best_f1": s.best_f1,
        "best_f1_confidence": s.best_f1_confidence,
        "per_category": per_cat,
    }


def cmd_eval(args):
    truth = aio.load_dataset(args.truth)
    truths = truth.truths_by_image()
    dets = aio.load_detections(args.dets, truth.ids)
    s = map_summary(dets, truths, truth.categories)
    extra = ap_at_iou(dets, truths, args.iou) if args.iou is not None else None
    doc = _summary_dict(s, extra, args.iou)
    if args.format == "markdown":
        lines = [
            f"mAP50 {doc['map50']:.5f} | mAP50:95 {doc['map5095']:.5f} | F1 {doc['best_f1']:.3f} @ {doc['best_f1_confidence']:.3f}c",
            "",
            "| Class | Instances | P | R | AP50 | AP50:95 |",
            "|---|---|---|---|---|---|",
        ]
        for name, d in doc["per_category"].items():
            lines.append(
                f"| {name} | {d['n_truths']} | {d['precision']:.3f} | {d['recall']:.3f} | {d['ap50']:.3f} | {d['ap5095']:.3f} |"
            )
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(doc, indent=2) + "\n"
    _emit(text, args.out)


def cmd_softlabel(args):
    skeleton = aio.load_dataset(args.skeleton).skeleton()
    dets = aio.load_detections(args.dets, skeleton.ids)
    cfg = SoftLabelConfig(args.conf, None if args.no_nms else args.iou, not args.no_sidecar)
    soft, sidecars = generate_soft_dataset(skeleton, dets, cfg)
    aio.save_dataset(soft, args.out, sidecars)
    log.info("wrote %d images, %d soft labels", len(soft), soft.instance_count())


def cmd_split(args):
    d = aio.load_dataset(args.manifest)
    parts = split_dataset(d, SplitSpec(tuple(args.ratios), args.seed))
    out = Path(args.out)
    for name, part in zip(("train1", "train2", "valid"), parts):
        aio.save_dataset(part, out / f"{name}.json")
        print(f"{name}: {len(part)} images, {part.instance_count()} instances")


def cmd_stats(args):
    st = dataset_stats(aio.load_dataset(args.manifest), grid=args.grid, bins=args.bins)
    if args.format == "markdown":
        lines = [f"images: {st.n_images}, instances: {st.n_instances}, background: {st.background_fraction:.3f}", ""]
        lines += ["| Class | Count | Fraction |", "|---|---|---|"]
        lines += [f"| {n} | {c} | {f:.3f} |" for n, c, f in zip(st.category_names, st.counts, st.fractions)]
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(st.to_dict()) + "\n"
    _emit(text, args.out)


def cmd_render(args):
    truth = aio.load_dataset(args.truth)
    soft = {r.id: r for r in aio.load_dataset(args.soft).images} if args.soft else {}
    records = [r for r in truth.images if args.id is None or r.id == args.id]
    if args.id is not None and not records:
        raise InputError(f"no image {args.id!r} in {args.truth}")
    for rec in records:
        s = soft[rec.id].annotations if rec.id in soft else ()
        svg = render_overlay(rec, rec.annotations, s, image_href=args.image)
        if args.id is not None:
            _emit(svg, args.out)
        else:
            if not args.out:
                raise BadConfig("--out directory required when rendering every image")
            aio.write_text_atomic(Path(args.out) / f"{rec.id}.svg", svg)


def cmd_simulate(args):
    d = aio.load_dataset(args.manifest)
    model = NoiseModel.load(args.noise) if args.noise else NoiseModel()
    if args.seed is not None:
        model = NoiseModel.from_dict(dict(model.to_dict(), seed=args.seed))
    dets = simulate_detections(d, model)
    aio.save_detections(args.out, dets)
    log.info("wrote detections for %d images", len(dets))


def cmd_synth(args):
    d = synth_dataset(
        args.n_images,
        background_fraction=args.background,
        seed=args.seed,
        objects_per_image=args.objects_per_image,
    )
    aio.save_dataset(d, args.out)
    print(f"{len(d)} images, {d.instance_count()} instances")


def cmd_experiment(args):
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise BadConfig(f"{args.config}: {exc}") from None
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out:
        doc["output_dir"] = args.out
    if args.conf:
        doc["thresholds"] = args.conf
    if args.iou is not None:
        doc["nms_iou"] = args.iou
    if args.n_images is not None:
        doc.setdefault("synth", {})["n_images"] = args.n_images
    cfg = ExperimentConfig.from_dict(doc)
    report = run_experiment(cfg, jobs=args.jobs)
    sys.stdout.write(emit_report(report, args.format))


def cmd_ingest_xview(args):
    try:
        dims_doc = json.loads(Path(args.dims).read_text(encoding="utf-8"))
        dims = {str(k): (int(v[0]), int(v[1])) for k, v in dims_doc.items()}
    except (ValueError, TypeError, IndexError) as exc:
        raise InputError(f"{args.dims}: expected {{image_id: [width, height]}}: {exc}") from None
    remap = aio.RemapTable.load(args.remap or aio.example_remap_path())
    d, skipped = aio.ingest_xview(Path(args.geojson).read_text(encoding="utf-8"), dims, remap)
    aio.save_dataset(d, args.out)
    print(json.dumps({"images": len(d), "mapped": d.instance_count(),
                      "skipped": {str(k): v for k, v in sorted(skipped.items())}}))


def _parse_selector(items):
    sel = {}
    for item in items or ():
        key, _, raw = item.partition("=")
        if key not in ("model", "conf", "category", "metric"):
            raise BadConfig(f"bad selector key {key!r}")
        if raw == "*":
            sel[key] = "*"
        elif key == "conf":
            try:
                sel[key] = None if raw in ("", "none", "-") else float(raw)
            except ValueError:
                raise BadConfig(f"bad conf selector {raw!r}") from None
        else:
            sel[key] = raw
    return sel


def cmd_report(args):
    try:
        doc = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InputError(f"{args.input}: {exc}") from None
    if "report" in doc and "rows" not in doc:
        doc = doc["report"]
    report = Report.from_dict(doc, args.delta_mode)
    if args.select is not None:
        value = aggregate_deltas(report.delta_table(), _parse_selector(args.select), args.mode)
        _emit(f"{value:.4f}\n", args.out)
    else:
        _emit(emit_report(report, args.format), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softlabel", description="Soft-label dataset generation and detection evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("eval", help="score detections against ground truth")
    s.add_argument("--truth", required=True, help="ground-truth manifest")
    s.add_argument("--dets", required=True, help="directory of <image id>.txt detection files")
    s.add_argument("--iou", type=float, help="also report per-category AP at this IoU")
    s.add_argument("--format", choices=("json", "markdown"), default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("softlabel", help="turn detections into a soft-label dataset")
    s.add_argument("--skeleton", required=True, help="manifest whose images define the output")
    s.add_argument("--dets", required=True)
    s.add_argument("--conf", type=float, default=0.3)
    s.add_argument("--iou", type=float, default=0.45, help="NMS IoU threshold")
    s.add_argument("--no-nms", action="store_true")
    s.add_argument("--no-sidecar", action="store_true")
    s.add_argument("--out", required=True, help="output manifest path")
    s.set_defaults(func=cmd_softlabel)

    s = sub.add_parser("split", help="seeded train1/train2/valid split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ratios", type=float, nargs=3, default=(0.4, 0.4, 0.2))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("--manifest", required=True)
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--bins", type=int, default=50)
    s.add_argument("--format", choices=("json", "markdown"), default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("render", help="SVG overlay of ground truth (green) and soft labels (red)")
    s.add_argument("--truth", required=True)
    s.add_argument("--soft")
    s.add_argument("--id", help="single image id; otherwise render all into --out")
    s.add_argument("--image", help="background image href")
    s.add_argument("--out")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("simulate", help="synthetic detections for a dataset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--noise", help="noise model JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="detections directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("synth", help="synthetic ground-truth dataset")
    s.add_argument("--n-images", type=int, default=2000)
    s.add_argument("--background", type=float, default=1 / 3)
    s.add_argument("--objects-per-image", type=float, default=11.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output manifest path")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("experiment", help="full split / label / compare / evaluate flow")
    s.add_argument("--config", help="experiment config JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--conf", type=float, nargs="+", help="soft-label thresholds")
    s.add_argument("--iou", type=float, help="NMS IoU threshold")
    s.add_argument("--n-images", type=int, help="synthetic dataset size")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--format", choices=("json", "markdown", "csv"), default="markdown")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("ingest-xview", help="convert xView GeoJSON to a dataset")
    s.add_argument("--geojson", required=True)
    s.add_argument("--dims", required=True, help="JSON {image_id: [width, height]}")
    s.add_argument("--remap", help="remap table JSON (default: bundled example)")
    s.add_argument("--out", required=True, help="output manifest path")
    s.set_defaults(func=cmd_ingest_xview)

    s = sub.add_parser("report", help="recompute deltas and aggregates from a JSON report")
    s.add_argument("--input", required=True)
    s.add_argument("--delta-mode", choices=("percent", "log"))
    s.add_argument("--format", choices=("json", "markdown", "csv"), default="markdown")
    s.add_argument("--select", nargs="*", metavar="KEY=VALUE",
                   help="print the mean of matching deltas, e.g. category=plane conf=0.5")
    s.add_argument("--mode", choices=("signed-mean", "absolute-mean"), default="signed-mean")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def _log_level() -> int:
    name = os.environ.get("SOFTLABEL_LOG", "WARNING").strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.WARNING


def main(argv=None) -> int:
    logging.basicConfig(level=_log_level(), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are configuration errors; --help exits 0
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except BadConfig as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (SoftLabelError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
