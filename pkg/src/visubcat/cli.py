"""Command-line entry point: ``visubcat <command> ...`` (or ``python -m visubcat``).

Every command exits 0 on success. On failure it prints one JSON line
``{"error": <kind>, "command": <command>, "message": <text>}`` to stderr and
exits 1 (2 for command-line usage errors).
"""
import argparse
import json
import os
import sys

from . import experiments as exp
from .config import load_config
from .dataset import load_manifest
from .detection import detect, read_detections, write_detections
from .evaluation import PROTOCOLS, average_precision, format_report, write_pr_csv
from .imaging import load_image
from .model import load_model, save_model
from .scene import (evaluate_scene, load_scene_manifest, load_scene_model, save_scene_manifest,
                    save_scene_model, synthetic_scene_set, train_scene)
from .synth import write_synth
from .training import train_detector


def _common(p):
    p.add_argument("--config", help="flat key = value file (TrainConfig keys, synth.* keys)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")


def _cfg(args, **extra):
    return load_config(args.config, seed=args.seed, threads=args.threads, **extra)


def _image_list(path):
    """(image_id, path) pairs from a manifest JSON or a text file of paths."""
    if path.endswith(".json"):
        return [(e.id, e.path) for e in load_manifest(path).entries]
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            p = line if os.path.isabs(line) else os.path.join(base, line)
            out.append((os.path.splitext(os.path.basename(p))[0], p))
    return out


def cmd_train(args):
    cfg, _ = _cfg(args)
    man = load_manifest(args.manifest)
    model = train_detector(man, cfg, args.label)
    save_model(model, args.out)
    print(f"model: {args.out} (label {model.label}, K={model.K})")


def cmd_detect(args):
    cfg, _ = _cfg(args)
    model = load_model(args.model)
    results = []
    for image_id, path in _image_list(args.images):
        dets = detect(load_image(path), model, raw_thresh=args.raw_thresh, nms_overlap=args.nms,
                      bypass_calibration=args.raw, threads=cfg.threads)
        results.append((image_id, dets))
    write_detections(args.out, results)
    print(f"detections: {args.out} ({sum(len(d) for _, d in results)} boxes, {len(results)} images)")


def cmd_eval(args):
    man = load_manifest(args.manifest, check_paths=False)
    recs = read_detections(args.detections)
    curve = average_precision(recs, man, args.category, protocol=args.protocol)
    category = args.category or man.categories[0]
    sys.stdout.write(format_report(curve, category, len(recs)))
    if args.csv:
        write_pr_csv(curve, args.csv)


def cmd_scene_train(args):
    cfg, _ = _cfg(args)
    examples = load_scene_manifest(args.manifest)
    model = train_scene(examples, args.K, args.init, cfg)
    save_scene_model(model, args.out)
    print(f"scene model: {args.out} ({len(model.categories)} categories)")


def cmd_scene_eval(args):
    model = load_scene_model(args.model)
    rep = evaluate_scene(model, load_scene_manifest(args.manifest), args.protocol)
    lines = ["category,ap"] + [f"{c},{ap:.6f}" for c, ap in rep.per_category.items()]
    lines.append(f"mean,{rep.mean_ap:.6f}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)


def cmd_gen_synth(args):
    cfg, spec = _cfg(args)
    if args.scene:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "scenes.json")
        examples = synthetic_scene_set(args.scene_examples, seed=spec.seed)
        save_scene_manifest(examples, path)
    else:
        path = write_synth(spec, args.out)
    print(f"manifest: {path}")


def cmd_experiment(args):
    cfg, spec = _cfg(args)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else None
    rows = exp.run_experiment(args.name, spec, cfg, ks=ks, n_test=args.n_test)
    text = exp.rows_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="visubcat", description="Visual-subcategory detection and scene classification.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and calibrate a subcategory mixture")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--label", help="category to train (default: the only one)")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run a model over images")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True, help="manifest JSON or text file of image paths")
    p.add_argument("--out", required=True, help="detection file to write")
    p.add_argument("--raw-thresh", type=float, default=-1.0)
    p.add_argument("--nms", type=float, default=0.5, help="maximum overlap kept by NMS")
    p.add_argument("--raw", action="store_true", help="report raw instead of calibrated scores")
    _common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="average precision of a detection file")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--category")
    p.add_argument("--protocol", choices=PROTOCOLS, default="voc2007-11pt")
    p.add_argument("--csv", help="write the precision/recall curve here")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scene-train", help="train one-vs-all scene subcategory classifiers")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--init", choices=("kmeans", "labels"), default="kmeans")
    _common(p)
    p.set_defaults(func=cmd_scene_train)

    p = sub.add_parser("scene-eval", help="per-category and mean AP of a scene model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=PROTOCOLS, default="voc2007-11pt")
    p.add_argument("--csv")
    _common(p)
    p.set_defaults(func=cmd_scene_eval)

    p = sub.add_parser("gen-synth", help="render a synthetic glyph dataset (or scene descriptors)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scene", action="store_true", help="write synthetic scene descriptors instead")
    p.add_argument("--scene-examples", type=int, default=3000)
    _common(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("experiment", help="run a synthetic experiment and print its CSV")
    p.add_argument("name", choices=exp.EXPERIMENTS)
    p.add_argument("--out", help="also write the CSV here")
    p.add_argument("--ks", help="comma-separated K values for k-sweep")
    p.add_argument("--n-test", type=int, default=100)
    _common(p)
    p.set_defaults(func=cmd_experiment)
    return ap


def _fail(command, kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "command": command, "message": message}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail(None, "usage", "invalid command line", 2)
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        return _fail(args.command, type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
