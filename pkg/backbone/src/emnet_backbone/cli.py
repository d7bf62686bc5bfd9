"""Command-line entry point: finetune, distill-stage1, distill-stage2,
export.

Frames are .npy arrays of shape (N, 3, 224, 224); labels are .npy or JSON
integer arrays.  Each training command writes the model checkpoint plus a
JSON training log next to it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .arch import Emnet, EmnetSpec, build_surrogate_teacher, build_vgg16_teacher
from .export import export_feature_maps
from .training import (
    TrainSchedule,
    finetune_teacher,
    train_accuracy,
    train_emnet_stage1,
    train_emnet_stage2,
)


def _load_frames(path):
    frames = np.load(path)
    return torch.as_tensor(frames, dtype=torch.float32)


def _load_labels(path):
    path = str(path)
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            return torch.as_tensor(json.load(fh), dtype=torch.long)
    return torch.as_tensor(np.load(path), dtype=torch.long)


def _schedule(args) -> TrainSchedule:
    return TrainSchedule(
        epochs=args.epochs,
        learning_rate=args.lr,
        decay_every=args.decay_every,
        batch_size=args.batch_size,
        momentum=args.momentum,
    )


def _save_checkpoint(path, kind, model, extra=None):
    doc = {"kind": kind, "state": model.state_dict()}
    if extra:
        doc.update(extra)
    torch.save(doc, path)


def _write_log(out_path, command, trace, extra=None):
    log_path = Path(out_path).with_suffix(".log.json")
    doc = {"command": command, "steps": len(trace), "loss": trace}
    if extra:
        doc.update(extra)
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load_teacher(path, num_classes):
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("kind") != "teacher":
        raise ValueError(f"{path} is not a teacher checkpoint")
    arch = doc.get("arch", "vgg16")
    teacher = (build_vgg16_teacher(doc["num_classes"]) if arch == "vgg16"
               else build_surrogate_teacher(doc["num_classes"]))
    teacher.load_state_dict(doc["state"])
    return teacher


def _load_emnet(path) -> Emnet:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("kind") != "emnet":
        raise ValueError(f"{path} is not a student checkpoint")
    student = Emnet(EmnetSpec(**doc["spec"]))
    student.load_state_dict(doc["state"])
    return student


def cmd_finetune(args) -> int:
    frames = _load_frames(args.frames)
    labels = _load_labels(args.labels)
    torch.manual_seed(args.seed)
    teacher = (build_vgg16_teacher(args.num_classes, weights_path=args.weights)
               if args.arch == "vgg16" else build_surrogate_teacher(args.num_classes))
    trace = finetune_teacher(teacher, frames, labels, args.num_classes, _schedule(args),
                             max_steps=args.steps)
    _save_checkpoint(args.out, "teacher", teacher,
                     {"num_classes": args.num_classes, "arch": args.arch})
    _write_log(args.out, "finetune", trace,
               {"train_accuracy": train_accuracy(teacher, frames, labels)})
    print(f"finetune: {len(trace)} steps, loss {trace[0]:.4f} -> {trace[-1]:.4f}")
    return 0


def cmd_stage1(args) -> int:
    frames = _load_frames(args.frames)
    torch.manual_seed(args.seed)
    teacher = _load_teacher(args.teacher, None)
    student = Emnet(EmnetSpec(num_classes=args.num_classes,
                              match_dim=teacher.feature_channels))
    trace = train_emnet_stage1(teacher, student, frames, _schedule(args),
                               max_steps=args.steps)
    _save_checkpoint(args.out, "emnet", student,
                     {"spec": {"num_classes": args.num_classes,
                               "match_dim": teacher.feature_channels}})
    _write_log(args.out, "distill-stage1", trace)
    print(f"distill-stage1: {len(trace)} steps, loss {trace[0]:.4f} -> {trace[-1]:.4f}")
    return 0


def cmd_stage2(args) -> int:
    frames = _load_frames(args.frames)
    labels = _load_labels(args.labels)
    torch.manual_seed(args.seed)
    student = _load_emnet(args.emnet)
    trace = train_emnet_stage2(student, frames, labels, _schedule(args),
                               max_steps=args.steps, seed=args.seed)
    _save_checkpoint(args.out, "emnet", student,
                     {"spec": {"num_classes": student.spec.num_classes,
                               "match_dim": student.spec.match_dim}})
    _write_log(args.out, "distill-stage2", trace,
               {"train_accuracy": train_accuracy(student, frames, labels)})
    print(f"distill-stage2: {len(trace)} steps, loss {trace[0]:.4f} -> {trace[-1]:.4f}")
    return 0


def cmd_export(args) -> int:
    frames = _load_frames(args.frames)
    student = _load_emnet(args.emnet)
    shape = export_feature_maps(student, frames, args.out, video_id=args.video_id,
                                layer_tag=args.layer)
    print(f"export: wrote {args.out} with shape {shape}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emnet-backbone", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def training_args(p, needs_labels):
        p.add_argument("--frames", required=True, help=".npy frames (N, 3, 224, 224)")
        if needs_labels:
            p.add_argument("--labels", required=True, help=".npy or .json integer labels")
        p.add_argument("--out", required=True, help="checkpoint output path")
        p.add_argument("--num-classes", type=int, default=12)
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--steps", type=int, default=None, help="hard step cap")
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--decay-every", type=int, default=50)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("finetune")
    training_args(p, needs_labels=True)
    p.add_argument("--arch", choices=("vgg16", "small"), default="vgg16")
    p.add_argument("--weights", default=None, help="optional conv state-dict file")

    p = sub.add_parser("distill-stage1")
    training_args(p, needs_labels=False)
    p.add_argument("--teacher", required=True, help="fine-tuned teacher checkpoint")

    p = sub.add_parser("distill-stage2")
    training_args(p, needs_labels=True)
    p.add_argument("--emnet", required=True, help="stage-1 student checkpoint")

    p = sub.add_parser("export")
    p.add_argument("--frames", required=True)
    p.add_argument("--emnet", required=True)
    p.add_argument("--out", required=True, help="tensor file to write")
    p.add_argument("--video-id", required=True)
    p.add_argument("--layer", default="conv5")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "finetune": cmd_finetune,
        "distill-stage1": cmd_stage1,
        "distill-stage2": cmd_stage2,
        "export": cmd_export,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:   # noqa: BLE001 -- map anything to exit 1
        print(json.dumps({"error": str(exc), "stage": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
