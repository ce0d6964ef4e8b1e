"""Command line entry points: train, track, eval, synth.

Every config key doubles as a flag (`--train.lr_start 0.01`); flags
override the --config file, which overrides built-in defaults.  The
resolved config is written next to each command's outputs so a run can
be reproduced from its artifacts.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

import cv2
import numpy as np

from . import config as cfgmod
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_dataset, load_sequence
from .errors import CheckpointError, ConfigError
from .evalkit import series_from_log, run_supervised, summarize, write_reports
from .synth import gen_synthetic
from .tracker import ModelTracker, track_sequence
from .training import train


def _add_common(p):
    p.add_argument("--config", help="config file (dotted key = value lines)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--preset", choices=("paper", "desk"))
    p.add_argument("--out", help="output directory (paths.out)")
    for key in sorted(cfgmod.DEFAULTS):
        if key in ("preset", "seed"):
            continue            # spelled as plain global flags above
        p.add_argument(f"--{key}", dest=key, metavar="V",
                       help=argparse.SUPPRESS)


def _resolve(args):
    cfg = cfgmod.default_config()
    if args.config:
        cfg = cfgmod.load_config(args.config, base=cfg)
    overrides = {k: v for k, v in vars(args).items()
                 if k in cfgmod.DEFAULTS and v is not None}
    if args.preset:
        overrides["preset"] = args.preset
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["paths.out"] = args.out
    return cfgmod.apply_overrides(cfg, overrides)


def _outdir(cfg, *parts):
    path = os.path.join(cfg["paths.out"], *parts)
    os.makedirs(path, exist_ok=True)
    return path


def _dump_config(cfg, out):
    cfgmod.save_config(cfg, os.path.join(out, "config.txt"))


def cmd_train(args):
    cfg = _resolve(args)
    out = _outdir(cfg)
    if args.synthetic:
        data_dir = _outdir(cfg, "synthetic")
        dataset = gen_synthetic(data_dir, cfgmod.make_synth_config(cfg),
                                seed=cfg["synth.seed"])
    elif cfg["paths.dataset"]:
        dataset = load_dataset(cfg["paths.dataset"])
    else:
        raise ConfigError(
            "no training data: set paths.dataset or pass --synthetic")
    schedule = cfgmod.make_schedule(cfg)
    if args.iters is not None:
        per_epoch = max(1, math.ceil(args.iters / schedule.epochs))
        schedule = replace(schedule,
                           pairs_per_epoch=per_epoch * schedule.batch_size)
    model = cfgmod.make_model(cfg)
    _dump_config(cfg, out)
    result = train(model, dataset, schedule,
                   out_dir=_outdir(cfg, "checkpoints"))
    losses = result.iter_losses
    head = np.mean(losses[:10])
    tail = np.mean(losses[-10:])
    print(f"trained {len(losses)} iterations over {schedule.epochs} epochs")
    print(f"head10 loss {head:.6f}  tail10 loss {tail:.6f}  "
          f"drop {(1 - tail / head) * 100:.1f}%")
    print(f"checkpoints in {os.path.join(out, 'checkpoints')}")
    return 0


def _load_model(cfg, checkpoint):
    model = cfgmod.make_model(cfg)
    load_checkpoint(model, checkpoint)
    return model


def _parse_box(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise ConfigError(f"expected x,y,w,h box, got {text!r}")
    return parts


def _write_boxes(path, boxes):
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(f"{b[0]:.4f},{b[1]:.4f},{b[2]:.4f},{b[3]:.4f}\n")


def cmd_track(args):
    cfg = _resolve(args)
    out = _outdir(cfg)
    model = _load_model(cfg, args.checkpoint)
    seq = load_sequence(args.sequence)
    init_box = _parse_box(args.init_box) if args.init_box else None
    boxes = track_sequence(seq, model, cfgmod.make_tracker_config(cfg),
                           init_box=init_box)
    log_path = os.path.join(out, f"{seq.name}_boxes.txt")
    _write_boxes(log_path, boxes)
    _dump_config(cfg, out)
    if args.overlay:
        overlay_dir = _outdir(cfg, "overlay")
        for t, frame_path in enumerate(seq.frames):
            img = cv2.imread(frame_path, cv2.IMREAD_COLOR)
            x, y, w, h = boxes[t]
            cv2.rectangle(img, (int(round(x)), int(round(y))),
                          (int(round(x + w)), int(round(y + h))),
                          (0, 0, 255), 1)
            cv2.imwrite(os.path.join(overlay_dir,
                                     os.path.basename(frame_path)), img)
        print(f"overlays in {overlay_dir}")
    print(f"box log: {log_path} ({len(boxes)} frames)")
    return 0


def cmd_eval(args):
    cfg = _resolve(args)
    out = _outdir(cfg)
    dataset_path = args.dataset or cfg["paths.dataset"]
    if not dataset_path:
        raise ConfigError("no sequences: set paths.dataset or pass --dataset")
    dataset = load_dataset(dataset_path)
    if bool(args.checkpoint) == bool(args.boxes_dir):
        raise ConfigError("need exactly one of --checkpoint or --boxes-dir")
    threshold = cfg["eval.threshold"]
    if args.checkpoint:
        model = _load_model(cfg, args.checkpoint)
        tracker = ModelTracker(model, cfgmod.make_tracker_config(cfg))
        series = [run_supervised(tracker, seq, threshold=threshold,
                                 reinit_skip=cfg["eval.reinit_skip"],
                                 burn_in=cfg["eval.burn_in"])
                  for seq in dataset.sequences]
    else:
        series = []
        for seq in dataset.sequences:
            log_path = os.path.join(args.boxes_dir, f"{seq.name}.txt")
            if not os.path.isfile(log_path):
                raise ConfigError(f"{seq.name}: no box log at {log_path}")
            boxes = np.loadtxt(log_path, delimiter=",", ndmin=2)
            series.append(series_from_log(seq.name, boxes, seq.boxes,
                                          threshold=threshold,
                                          attributes=seq.attributes))
    report = summarize(series)
    report_dir = _outdir(cfg, "reports")
    write_reports(report, report_dir)
    _dump_config(cfg, out)
    print(f"accuracy = {report.mean_accuracy:.6f}")
    print(f"robustness = {report.total_failures}")
    print(f"eao = {report.eao_curve.score:.6f}")
    print(f"reports in {report_dir}")
    return 0


def cmd_synth(args):
    cfg = _resolve(args)
    target = cfg["paths.out"]
    if os.path.isdir(target) and os.listdir(target) and not args.force:
        raise ConfigError(f"{target} is not empty; pass --force to overwrite")
    dataset = gen_synthetic(target, cfgmod.make_synth_config(cfg),
                            seed=cfg["synth.seed"])
    n = sum(len(s) for s in dataset.sequences)
    print(f"wrote {len(dataset.sequences)} sequences ({n} frames) to {target}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fusetrack",
        description="fused-feature Siamese tracker: train, track, eval, synth")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--synthetic", action="store_true",
                   help="train on a generated synthetic dataset")
    p.add_argument("--iters", type=int,
                   help="total SGD iterations (split across train.epochs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker on one sequence")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True, help="sequence directory")
    p.add_argument("--init-box", help="x,y,w,h (default: first gt box)")
    p.add_argument("--overlay", action="store_true",
                   help="write frames with the predicted box drawn")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="supervised evaluation over a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", help="run the tracker from this checkpoint")
    p.add_argument("--boxes-dir", help="score existing <sequence>.txt box logs")
    p.add_argument("--dataset", help="dataset root (default: paths.dataset)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError,
            ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
