"""Full training run on the UAS and BPS corpora at 192x128.

Trains each requested variant with the default recipe (online rain on the
training split, fixed seeded rain on the test split), evaluates the best
checkpoint and prints one JSON line per (corpus, variant) next to the
published reference numbers. Nothing is asserted: the comparison is left to
the reader.

    python scripts/reproduce.py --uas /data/uas --bps /data/bps --out runs/repro
"""
import argparse
import json
import logging
from pathlib import Path

from drsnet.checkpoint import load_checkpoint
from drsnet.data import load_corpus, load_samples
from drsnet.model import NetworkConfig, build_drsnet
from drsnet.trainer import TrainConfig, evaluate, fixed_rain, split_dataset, train

# (foreground accuracy, mIoU) reported for the add-rain versions at 192x128.
REFERENCE = {
    "uas": {"A": (0.9746, 0.9255), "B": (0.9635, 0.9054), "C": (0.9725, 0.9246)},
    "bps": {"A": (0.8731, 0.8291), "B": (0.8424, 0.8347), "C": (0.8712, 0.8344)},
}


def run(name: str, root: Path, variants, cfg: TrainConfig, out: Path) -> None:
    samples = load_samples(load_corpus(root), cfg.input_size)
    train_set, test_set = split_dataset(samples, cfg.split_ratio, cfg.seed)
    test_set = fixed_rain(test_set, cfg.seed, cfg.streak_color)
    for variant in variants:
        run_dir = out / name / variant
        model = build_drsnet(NetworkConfig(variant=variant, input_size=cfg.input_size))
        train(model, train_set, test_set, cfg, run_dir=run_dir)
        best, _ = load_checkpoint(run_dir / "best.ckpt", cfg.device)
        report = evaluate(best, test_set, cfg.threshold, cfg.averaging)
        ref_fa, ref_miou = REFERENCE[name][variant]
        record = {"corpus": name, "variant": variant, "n_train": len(train_set), "n_test": len(test_set),
                  **report.summary(), "reference_foreground_accuracy": ref_fa, "reference_miou": ref_miou}
        with open(out / "results.jsonl", "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        print(json.dumps(record, sort_keys=True), flush=True)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--uas", type=Path)
    ap.add_argument("--bps", type=Path)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--variants", nargs="+", default=["A", "B", "C"], choices=["A", "B", "C"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--device", default="cpu")
    args = ap.parse_args()
    if not (args.uas or args.bps):
        ap.error("give --uas and/or --bps")
    logging.basicConfig(level=logging.INFO)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(seed=args.seed, device=args.device)
    for name, root in (("uas", args.uas), ("bps", args.bps)):
        if root:
            run(name, root, args.variants, cfg, args.out)


if __name__ == "__main__":
    main()
