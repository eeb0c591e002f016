"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Settings resolve as
flags > ``--config`` file > defaults. Every output lands under ``--out``.
"""
from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ablation, gradsuite
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .metrics import ConfusionMatrix, accumulate, summary, write_metrics_csv
from .model import BLOCK_CONFIGS, model_from_state
from .synthdata import Dataset, GenConfig, generate_scene, load_manifest, read_pgm, write_manifest, write_pgm
from .trainer import TrainConfig, TrainingError, apply_overrides, evaluate, load_config, predict, state_of
from .trainer import train_student, train_teacher

ORACLE = "@oracle"  # eval stub that predicts the ground truth


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--classes", type=int, choices=(2, 5))


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--focal-variant", choices=("standard", "literal"))
    p.add_argument("--exclude-background", action="store_true")
    p.add_argument("--no-hfam", action="store_true", help="plain backbone without the alignment head")
    p.add_argument("--blocks", choices=sorted(BLOCK_CONFIGS))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hfdnet", description="EO-to-SAR feature distillation for segmentation.")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic EO/SAR/mask dataset and manifest")
    _common(p)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--start", type=int, default=0, help="first sample index")

    p = sub.add_parser("train-teacher", help="train the EO teacher")
    _common(p)
    _training(p)
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("train-student", help="train the SAR student against a frozen teacher")
    _common(p)
    _training(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--teacher", type=Path, help="teacher checkpoint; omit for the SAR-only baseline")

    p = sub.add_parser("eval", help="score a checkpoint on a manifest (SAR inputs)")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", required=True, help=f"checkpoint path, or {ORACLE}")
    p.add_argument("--exclude-background", action="store_true")
    p.add_argument("--modality", choices=("sar", "eo"), default="sar")

    p = sub.add_parser("infer", help="predict masks for SAR PGMs")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="take SAR inputs from a manifest")
    p.add_argument("inputs", nargs="*", type=Path, help="SAR PGM files")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    _common(p, out_required=False)
    p.add_argument("--instances", type=int, default=10)

    p = sub.add_parser("ablate", help="components | blocks | temperature ablation")
    _common(p)
    _training(p)
    p.add_argument("suite")
    p.add_argument("--manifest", type=Path, help="training manifest (default: standard synthetic set)")
    p.add_argument("--test-manifest", type=Path)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--teacher-epochs", type=int)
    return ap


# -- configuration ------------------------------------------------------------
def _train_config(args, stage: str) -> TrainConfig:
    cfg = TrainConfig()
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"--config: cannot read {args.config}")
        try:
            cfg = load_config(args.config, cfg)
        except ValueError as exc:
            raise UsageError(f"--config: {exc}") from exc
    flags = {
        "seed": args.seed,
        "num_classes": args.classes,
        "batch_size": getattr(args, "batch", None),
        "lr0": getattr(args, "lr", None),
        "temperature": getattr(args, "temperature", None),
        "lambda": getattr(args, "lam", None),
        "focal_variant": getattr(args, "focal_variant", None),
        "blocks": getattr(args, "blocks", None),
        "teacher_epochs": getattr(args, "teacher_epochs", None),
    }
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        flags["teacher_epochs" if stage == "teacher" else "student_epochs"] = epochs
    if getattr(args, "exclude_background", False):
        flags["include_background"] = False
    if getattr(args, "no_hfam", False):
        flags["hfam"] = False
    if stage == "student" and getattr(args, "teacher", None) is None:
        flags["hfdm"] = False
    try:
        return apply_overrides(cfg, {k: v for k, v in flags.items() if v is not None})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _require_file(path: Path | None, flag: str) -> None:
    if path is not None and not Path(path).is_file():
        raise FileNotFoundError(f"{flag}: cannot read {path}")


def _threads():
    raw = os.environ.get("HFD_THREADS")
    if raw is None:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"HFD_THREADS must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise UsageError(f"HFD_THREADS must be a non-negative integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def _progress(r: dict) -> None:
    print(f"epoch {r['epoch']:3d}  l_c {r['l_c']:.4f}  l_f {r['l_f']:.4f}  l_d {r['l_d']:.4f}  "
          f"miou {r['miou']:.4f}", flush=True)


# -- commands -------------------------------------------------------------------
def cmd_generate(args) -> int:
    classes = args.classes or 2
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.start < 0:
        raise UsageError("--start must be >= 0")
    try:
        gen = GenConfig(seed=42 if args.seed is None else args.seed, image_size=args.size, num_classes=classes)
        generate_scene(gen, args.start)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    samples = [generate_scene(gen, args.start + i) for i in range(args.count)]
    path = write_manifest(samples, args.out)
    print(f"wrote {len(samples)} samples to {path}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _train_config(args, "teacher")
    _require_file(args.manifest, "--manifest")
    data = load_manifest(args.manifest, cfg.num_classes)
    args.out.mkdir(parents=True, exist_ok=True)
    res = train_teacher(data, cfg, args.out / "train_log.csv", args.out / "train_metrics.csv", _progress)
    path = save_checkpoint(state_of(res.model), args.out / "teacher.hfdn")
    print(f"best epoch {res.best_epoch} train miou {res.best_miou:.4f}; wrote {path}")
    return 0


def cmd_train_student(args) -> int:
    cfg = _train_config(args, "student")
    _require_file(args.manifest, "--manifest")
    _require_file(args.teacher, "--teacher")
    teacher = model_from_state(load_checkpoint(args.teacher)) if args.teacher else None
    data = load_manifest(args.manifest, cfg.num_classes)
    args.out.mkdir(parents=True, exist_ok=True)
    res = train_student(data, teacher, cfg, args.out / "train_log.csv", args.out / "train_metrics.csv", _progress)
    path = save_checkpoint(state_of(res.model), args.out / "student.hfdn")
    print(f"best epoch {res.best_epoch} train miou {res.best_miou:.4f}; wrote {path}")
    return 0


def cmd_eval(args) -> int:
    oracle = args.checkpoint == ORACLE
    _require_file(args.manifest, "--manifest")
    if not oracle:
        _require_file(Path(args.checkpoint), "--checkpoint")
    if oracle:
        classes = args.classes or 2
        data = load_manifest(args.manifest, classes)
        cm = accumulate(ConfusionMatrix.empty(classes), data.mask, data.mask)
    else:
        model = model_from_state(load_checkpoint(args.checkpoint))
        if args.classes is not None and args.classes != model.num_classes:
            raise UsageError(f"--classes {args.classes} disagrees with the checkpoint's {model.num_classes}")
        data = load_manifest(args.manifest, model.num_classes)
        cm = evaluate(model, data, args.modality)
    args.out.mkdir(parents=True, exist_ok=True)
    path = write_metrics_csv(cm, args.out / "metrics.csv", not args.exclude_background)
    s = summary(cm, not args.exclude_background)
    print(f"acc {s['acc']:.6f}  miou {s['miou']:.6f}  f1 {s['f1']:.6f}; wrote {path}")
    return 0


def cmd_infer(args) -> int:
    if args.manifest is None and not args.inputs:
        raise UsageError("infer needs --manifest or at least one SAR PGM")
    _require_file(args.checkpoint, "--checkpoint")
    _require_file(args.manifest, "--manifest")
    for p in args.inputs:
        _require_file(p, "input")
    model = model_from_state(load_checkpoint(args.checkpoint))
    K = model.num_classes
    if args.manifest is not None:
        data = load_manifest(args.manifest, K)
        images, names = data.sar, data.names
    else:
        raw = [read_pgm(p) for p in args.inputs]
        if len({r.shape for r in raw}) != 1:
            raise ValueError("input PGMs differ in size")
        images = np.stack(raw)[:, None].astype(np.float32) / np.float32(255)
        names = [p.stem for p in args.inputs]
    preds = predict(model, images)
    args.out.mkdir(parents=True, exist_ok=True)
    gray = np.round(np.arange(K) * (255.0 / max(K - 1, 1))).astype(np.uint8)
    for name, mask in zip(names, preds):
        write_pgm(mask.astype(np.uint8), args.out / f"pred_{name}.pgm")
        write_pgm(gray[mask], args.out / f"vis_{name}.pgm")
    print(f"wrote {len(preds)} masks to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.instances < 1:
        raise UsageError("--instances must be >= 1")
    seed = 0 if args.seed is None else args.seed
    lines, ok = [], True
    for r in gradsuite.run_suite(args.instances, seed):
        line = (f"{r.name:<24} max_rel_err {r.max_error:.3e}  instances {r.instances:2d}  "
                f"{r.seconds:6.2f}s  {'PASS' if r.ok else 'FAIL'}")
        print(line, flush=True)
        lines.append(line)
        ok &= r.ok
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    if not ok:
        print(f"gradient check failed (tolerance {gradsuite.TOLERANCE:g})", file=sys.stderr)
        return 2
    return 0


def cmd_ablate(args) -> int:
    try:
        ablation.check_suite(args.suite)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg = _train_config(args, "student")
    cfg = replace(cfg, hfdm=True)
    _require_file(args.manifest, "--manifest")
    _require_file(args.test_manifest, "--test-manifest")
    if (args.manifest is None) != (args.test_manifest is None):
        raise UsageError("--manifest and --test-manifest go together")
    if args.manifest is None:
        gen = GenConfig(seed=42, num_classes=cfg.num_classes)
        train, test = Dataset.generate(gen, 200), Dataset.generate(gen, 50, start=200)
    else:
        train = load_manifest(args.manifest, cfg.num_classes)
        test = load_manifest(args.test_manifest, cfg.num_classes)
    rows = ablation.ablate(args.suite, train, test, cfg, args.seeds, progress=print)
    args.out.mkdir(parents=True, exist_ok=True)
    path = ablation.write_ablation_csv(rows, args.suite, args.out / f"ablation_{args.suite}.csv")
    print(f"wrote {path}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return 0 if exc.code in (0, None) else 1
        if args.command is None:
            raise UsageError("hfdnet: missing command; choose one of " + ", ".join(COMMANDS))
        with _threads():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (FileNotFoundError, CheckpointError, TrainingError, ValueError, OSError) as exc:
        print(f"hfdnet: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
