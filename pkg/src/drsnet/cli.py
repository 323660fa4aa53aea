"""Command-line entry point: ``drsnet <command> ...``.

Every report is written as JSON lines on stdout. Failures print a single
``error: category=<name> message=<text>`` line on stderr; usage errors exit
with 2 and runtime errors with 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (CorpusError, build_add_rain_benchmark, check_size, detect_layout, load_corpus,
                   load_samples, read_image, write_png)
from .model import ABLATIONS, NetworkConfig, build_ablation, build_drsnet
from .rain import STREAK_COLOR
from .trainer import TrainConfig

SEED_ENV = "DRSNET_SEED"


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like WxH, got {text!r}") from None
    try:
        return check_size((w, h))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise SystemExit(_usage_error(f"{SEED_ENV} must be an integer, got {value!r}"))


def _usage_error(message: str) -> int:
    print(f"error: category=usage message={message}", file=sys.stderr)
    return 2


def emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def write_manifest(path: Path | None, command: str, args: argparse.Namespace, extra: dict | None = None) -> dict:
    """Record the resolved arguments; with ``path=None`` the manifest is only returned."""
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {"command": command, "args": resolved, "seed": resolved.get("seed"),
                "version": __version__, **(extra or {})}
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list))
    return manifest


def _build_model(variant: str, ablation: str | None, size):
    if ablation:
        return build_ablation(ablation, input_size=size)
    return build_drsnet(NetworkConfig(variant=variant, input_size=size))


def cmd_add_rain(args) -> int:
    refs = load_corpus(args.input, args.layout)
    layout = detect_layout(args.input) if args.layout == "auto" else args.layout
    records = build_add_rain_benchmark(refs, args.out, args.seed, args.size, args.streak_color, layout)
    write_manifest(args.out / "run_manifest.json", "add-rain", args)
    emit({"command": "add-rain", "n_images": len(records), "out": str(args.out)})
    return 0


def _train_config(args) -> TrainConfig:
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values["input_size"] = args.size
    values["seed"] = args.seed
    return TrainConfig.from_dict(values)


def _train_run(args, model, out: Path):
    from .trainer import fixed_rain, split_dataset, train

    cfg = _train_config(args)
    samples = load_samples(load_corpus(args.data, args.layout), cfg.input_size)
    train_set, test_set = split_dataset(samples, cfg.split_ratio, cfg.seed)
    if cfg.rain_mode == "online":
        test_set = fixed_rain(test_set, cfg.seed, cfg.streak_color)
    model, history = train(model, train_set, test_set, cfg, run_dir=out)
    return cfg, history, len(train_set), len(test_set)


def cmd_train(args) -> int:
    model = _build_model(args.variant, args.ablation, args.size)
    cfg, history, n_train, n_test = _train_run(args, model, args.out)
    write_manifest(args.out / "manifest.json", "train", args,
                   {"train_config": cfg.to_dict(), "overrides": cfg.overrides(), "network": model.cfg.to_dict()})
    last = history.epochs[-1]
    emit({"command": "train", "n_train": n_train, "n_test": n_test, "epochs": len(history.epochs),
          "final_train_loss": last.train_loss, "test_foreground_accuracy": last.test_foreground_accuracy,
          "test_miou": last.test_miou, "best_epoch": history.best_epoch, "out": str(args.out)})
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .trainer import evaluate, fixed_rain

    model, _ = load_checkpoint(args.model)
    size = args.size or model.cfg.input_size
    samples = load_samples(load_corpus(args.data, args.layout), size)
    if args.rain:
        samples = fixed_rain(samples, args.seed, args.streak_color)
    report = evaluate(model, samples, args.threshold, args.averaging)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "per_image.jsonl", "w") as fh:
        for m in report.per_image:
            fh.write(json.dumps(m.__dict__) + "\n")
    record = {"command": "eval", "variant": model.cfg.variant, "input_size": list(size), **report.summary()}
    (args.out / "report.json").write_text(json.dumps(record, sort_keys=True))
    write_manifest(args.out / "manifest.json", "eval", args)
    emit(record)
    return 0


def cmd_predict(args) -> int:
    import cv2

    from .checkpoint import load_checkpoint
    from .trainer import predict_probabilities

    model, _ = load_checkpoint(args.model)
    image = read_image(args.input)
    h0, w0 = image.shape[:2]
    w, h = args.size or model.cfg.input_size
    prob = predict_probabilities(model, cv2.resize(image, (w, h), interpolation=cv2.INTER_LINEAR))
    prob = cv2.resize(prob, (w0, h0), interpolation=cv2.INTER_LINEAR)
    write_png(args.out, ((prob >= args.threshold) * 255).astype(np.uint8))
    if args.probabilities:
        np.save(args.probabilities, prob.astype(np.float32))
    write_manifest(Path(str(args.out) + ".manifest.json"), "predict", args)
    emit({"command": "predict", "out": str(args.out), "foreground_fraction": float((prob >= args.threshold).mean())})
    return 0


def cmd_profile(args) -> int:
    from .profiler import profile

    if args.table:
        names = [("DRSNet(" + v + ")", v, None) for v in ("A", "B", "C")]
        names += [(k, "A", k) for k in ABLATIONS]
    else:
        label = args.ablation or f"DRSNet({args.variant})"
        names = [(label, args.variant, args.ablation)]
    manifest = write_manifest(args.out / "manifest.json" if args.out else None, "profile", args)
    if not args.out:
        emit({"record": "manifest", **manifest})
    sizes = args.sizes or [args.size]
    for label, variant, ablation in names:
        for size in sizes:
            model = _build_model(variant, ablation, size)
            emit({"record": "profile", **profile(model, size, label, timing=args.timing, n_runs=args.runs).to_dict()})
    return 0


def cmd_ablate(args) -> int:
    from .profiler import count_flops, count_params

    kinds = list(ABLATIONS) if args.kind == "all" else [args.kind]
    rows = [("drsnet_A", None)] + [(k, k) for k in kinds]
    results = []
    for label, kind in rows:
        model = _build_model("A", kind, args.size)
        params, flops = count_params(model), count_flops(model, args.size).total()
        _, history, _, _ = _train_run(args, model, args.out / label)
        last = history.epochs[-1]
        row = {"command": "ablate", "model": label, "params_m": round(params / 1e6, 4),
               "gflops": round(flops / 1e9, 4), "foreground_accuracy": last.test_foreground_accuracy,
               "miou": last.test_miou}
        results.append(row)
        emit(row)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "table.jsonl", "w") as fh:
        for row in results:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    write_manifest(args.out / "manifest.json", "ablate", args)
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--data", type=Path, required=True, help="clean image + mask corpus")
    p.add_argument("--layout", choices=("auto", "paired", "suffix"), default="auto")
    p.add_argument("--size", type=parse_size, default=d.input_size, help="input size WxH")
    p.add_argument("--config", type=Path, help="JSON file with training settings")
    p.add_argument("--epochs", type=int, help=f"training epochs (default {d.epochs})")
    p.add_argument("--batch-size", dest="batch_size", type=int, help=f"batch size (default {d.batch_size})")
    p.add_argument("--lr", dest="base_lr", type=float, help=f"peak learning rate (default {d.base_lr})")
    p.add_argument("--momentum", type=float, help=f"SGD momentum (default {d.momentum})")
    p.add_argument("--weight-decay", dest="weight_decay", type=float,
                   help=f"weight decay on conv/linear weights (default {d.weight_decay})")
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int,
                   help=f"linear warmup length (default {d.warmup_epochs})")
    p.add_argument("--split-ratio", dest="split_ratio", type=float,
                   help=f"train fraction (default {d.split_ratio})")
    p.add_argument("--loss-reduction", dest="loss_reduction", choices=("mean", "sum"),
                   help=f"BCE reduction (default {d.loss_reduction})")
    p.add_argument("--rain-mode", dest="rain_mode", choices=("online", "none"),
                   help=f"online rain for training plus fixed rain on the test split (default {d.rain_mode})")
    p.add_argument("--averaging", choices=("per_image", "pooled"),
                   help=f"how test metrics are aggregated (default {d.averaging})")
    p.add_argument("--device", help=f"torch device (default {d.device})")
    p.add_argument("--num-workers", dest="num_workers", type=int,
                   help=f"data loader workers (default {d.num_workers})")
    p.add_argument("--out", type=Path, required=True, help="run directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="drsnet", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_help = f"random seed (falls back to ${SEED_ENV}, then 0)"

    p = sub.add_parser("add-rain", help="build a rain-overlaid copy of a corpus", formatter_class=fmt)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=default_seed(), help=seed_help)
    p.add_argument("--streak-color", type=float, default=STREAK_COLOR)
    p.add_argument("--size", type=parse_size, default=(192, 128), help="output size WxH")
    p.add_argument("--layout", choices=("auto", "paired", "suffix"), default="auto")
    p.set_defaults(func=cmd_add_rain)

    p = sub.add_parser("train", help="train a network", formatter_class=fmt)
    p.add_argument("--variant", choices=("A", "B", "C"), default="A")
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--seed", type=int, default=default_seed(), help=seed_help)
    p.add_argument("--streak-color", dest="streak_color", type=float)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--layout", choices=("auto", "paired", "suffix"), default="auto")
    p.add_argument("--size", type=parse_size, help="input size WxH (default: the checkpoint's)")
    p.add_argument("--rain", action="store_true", help="overlay fixed seeded rain before evaluating")
    p.add_argument("--seed", type=int, default=default_seed(), help=seed_help)
    p.add_argument("--streak-color", type=float, default=STREAK_COLOR)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--averaging", choices=("per_image", "pooled"), default="per_image")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one image", formatter_class=fmt)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output mask PNG")
    p.add_argument("--size", type=parse_size, help="network input size WxH (default: the checkpoint's)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--probabilities", type=Path, help="also save the probability map as .npy")
    p.add_argument("--seed", type=int, default=default_seed(), help=seed_help)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("profile", help="parameter and FLOP report", formatter_class=fmt)
    p.add_argument("--variant", choices=("A", "B", "C"), default="A")
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--size", type=parse_size, default=(192, 128))
    p.add_argument("--sizes", type=parse_size, nargs="+", help="several sizes at once")
    p.add_argument("--table", action="store_true", help="all variants and ablations")
    p.add_argument("--timing", action="store_true", help="also measure wall-clock latency")
    p.add_argument("--runs", type=int, default=20, help="timed forward passes")
    p.add_argument("--seed", type=int, default=default_seed(), help=seed_help)
    p.add_argument("--out", type=Path, help="directory for the run manifest")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("ablate", help="train DRSNet(A) and control networks", formatter_class=fmt)
    p.add_argument("--kind", choices=ABLATIONS + ("all",), default="all")
    p.add_argument("--seed", type=int, default=default_seed(), help=seed_help)
    p.add_argument("--streak-color", dest="streak_color", type=float)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parseable line instead of a traceback
        print(f"error: category={_category(exc)} message={exc}", file=sys.stderr)
        return 1


def _category(exc: Exception) -> str:
    if isinstance(exc, CorpusError):
        return "data"
    if isinstance(exc, (ValueError, KeyError)):
        return "invalid"
    if isinstance(exc, OSError):
        return "io"
    return "runtime"

if __name__ == "__main__":
    sys.exit(main())
