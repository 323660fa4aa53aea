"""Acceptance checks, one test per criterion.

Each test prints a single ``PASS | criterion | detail`` or ``FAIL | ...``
line; the lines are repeated in the pytest terminal summary.
"""
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from drsnet.data import build_add_rain_benchmark, load_corpus, synthetic_corpus, write_corpus
from drsnet.metrics import (bce_loss, binarize, confusion, foreground_accuracy, foreground_recall, miou)
from drsnet.model import ABLATIONS, NetworkConfig, build_ablation, build_drsnet
from drsnet.profiler import count_flops, count_params
from drsnet.rain import RainParams, build_streak_kernel, covered_fraction, generate_rain_mask, union_coverage
from drsnet.trainer import TrainConfig, evaluate, fixed_rain, lr_schedule, train

from gradcheck import finite_difference_error
from test_blocks import GRADIENT_CASES
from test_metrics import loop_bce, loop_counts, loop_miou

SIZES = [(192, 128), (384, 256), (768, 512)]


def variant(v):
    return build_drsnet(NetworkConfig(variant=v))


def test_parameter_budgets(acceptance_line):
    a, b, c = (count_params(variant(v)) for v in "ABC")
    ok = 0.46e6 <= a <= 0.62e6 and 0.47e6 <= b <= 0.63e6 and 0.28e6 <= c <= 0.38e6 and c < a <= b
    acceptance_line("parameter budgets", ok, f"A={a} B={b} C={c}")


def test_flop_budgets(acceptance_line):
    model = variant("A")
    f1, f2, f4 = (count_flops(model, s).total() for s in SIZES)
    ok = 0.15e9 <= f1 <= 0.25e9 and 3.8 <= f2 / f1 <= 4.1 and 15 <= f4 / f1 <= 16.5
    acceptance_line("FLOP budgets", ok, f"A@192x128={f1 / 1e9:.4f}G x{f2 / f1:.3f} x{f4 / f1:.3f}")


def test_ablation_budgets(acceptance_line):
    size = SIZES[0]
    a = variant("A")
    pa, fa = count_params(a), count_flops(a, size).total()
    se = build_ablation("seresnet18_encoder")
    sym = build_ablation("symmetric_skip")
    bott = build_ablation("resnet18_bottleneck")
    pse, fse = count_params(se), count_flops(se, size).total()
    psy, fsy = count_params(sym), count_flops(sym, size).total()
    pbo, fbo = count_params(bott), count_flops(bott, size).total()
    ok = (1.4e6 <= pse <= 2.0e6 and 0.85e9 <= fse <= 1.2e9
          and abs(psy - pa) <= 0.1 * pa and fsy < fa
          and 3.0e6 <= pbo <= 4.1e6 and 3.7e9 <= fbo <= 5.0e9)
    acceptance_line("ablation budgets", ok,
                    f"seresnet18={pse}/{fse / 1e9:.3f}G symmetric={psy}/{fsy / 1e9:.3f}G "
                    f"bottleneck={pbo}/{fbo / 1e9:.3f}G")


def test_shape_suite(acceptance_line):
    builders = [lambda v=v: variant(v) for v in "ABC"] + [lambda k=k: build_ablation(k) for k in ABLATIONS]
    failures = []
    for build in builders:
        model = build().eval()
        with torch.no_grad():
            for w, h in SIZES:
                if model(torch.zeros(1, 3, h, w)).shape != (1, 1, h, w):
                    failures.append(f"{model.cfg.encoder_mode}/{model.cfg.skip_mode}@{w}x{h}")
            try:
                model(torch.zeros(1, 3, 100, 100))
                failures.append("accepted 100x100")
            except ValueError:
                pass
    acceptance_line("shape suite", not failures, ", ".join(failures) or "6 models x 3 sizes, 100x100 rejected")


def test_metric_oracles(acceptance_line):
    rng = np.random.default_rng(2024)
    worst = 0.0
    exact = True
    for _ in range(200):
        target = rng.integers(0, 2, (8, 8))
        prob = rng.random((8, 8))
        pred = binarize(prob)
        c = confusion(pred, target)
        tp, fp, fn, tn = loop_counts(pred, target)
        exact &= (c.tp, c.fp, c.fn, c.tn) == (tp, fp, fn, tn)
        diffs = [
            foreground_accuracy(c) - (tp / (tp + fp) if tp + fp else 0.0),
            foreground_recall(c) - (tp / (tp + fn) if tp + fn else 0.0),
            miou(c) - loop_miou(pred, target),
            float(bce_loss(prob, target, "sum")) - loop_bce(prob, target),
        ]
        worst = max(worst, max(abs(d) for d in diffs))
    acceptance_line("metric oracles", exact and worst <= 1e-9, f"counts exact={exact}, max diff={worst:.2e}")


def test_bce_gradient(acceptance_line):
    rng = np.random.default_rng(7)
    h, worst = 1e-6, 0.0
    for _ in range(50):
        p = torch.tensor(rng.uniform(0.05, 0.95, (4, 4)), dtype=torch.float64, requires_grad=True)
        y = rng.integers(0, 2, (4, 4))
        bce_loss(p, torch.tensor(y, dtype=torch.float64), "sum").backward()
        base = p.detach().numpy()
        numeric = np.zeros((4, 4))
        for idx in np.ndindex(4, 4):
            up, down = base.copy(), base.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (loop_bce(up, y) - loop_bce(down, y)) / (2 * h)
        worst = max(worst, np.linalg.norm(p.grad.numpy() - numeric) / np.linalg.norm(numeric))
    acceptance_line("BCE gradient", worst <= 1e-4, f"max relative error={worst:.2e}")


def test_block_gradients(acceptance_line):
    errors = {}
    for name, make in sorted(GRADIENT_CASES.items()):
        torch.manual_seed(1)
        module, *inputs = make()
        errors[name] = finite_difference_error(module, *inputs)
    worst = max(errors, key=errors.get)
    acceptance_line("block gradients", errors[worst] <= 1e-3,
                    f"{len(errors)} block types, worst {worst}={errors[worst]:.2e}")


def test_rain_coverage(acceptance_line):
    rng = np.random.default_rng(0)
    covered, oracle = [], []
    for _ in range(100):
        angle = float(rng.uniform(-30, 30))
        params = RainParams(40, 3, angle, float(rng.uniform(0.6, 0.9)), 1 / 250)
        kernel = build_streak_kernel(40, 3, angle)
        covered.append(covered_fraction(generate_rain_mask(512, 512, params, rng, kernel)))
        oracle.append(union_coverage(params.intensity, kernel.footprint))
    mean, predicted = float(np.mean(covered)), float(np.mean(oracle))
    ok = 0.40 <= mean <= 0.48 and abs(mean - predicted) <= 0.02
    acceptance_line("rain coverage", ok, f"mean covered={mean:.4f}, union-bound oracle={predicted:.4f}")


def test_rain_determinism(acceptance_line, tmp_path):
    write_corpus(synthetic_corpus(20, (160, 96), seed=9), tmp_path / "corpus")
    refs = load_corpus(tmp_path / "corpus")
    for name in ("first", "second"):
        build_add_rain_benchmark(refs, tmp_path / name, seed=123, size=(128, 96))

    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    first, second = tree(tmp_path / "first"), tree(tmp_path / "second")
    acceptance_line("rain determinism", first == second and len(first) == 41,
                    f"{len(first)} files compared byte for byte")


def test_overfit_oracle(acceptance_line):
    size = (128, 96)
    samples = fixed_rain(synthetic_corpus(10, size, seed=0), seed=0)
    torch.manual_seed(0)
    model = build_drsnet(NetworkConfig(variant="A", input_size=size))
    # one full batch per step; 200 steps with the same 5% warmup fraction as the default recipe
    cfg = TrainConfig(batch_size=10, epochs=200, warmup_epochs=10, input_size=size,
                      rain_mode="none", eval_every=0)
    model, history = train(model, samples, None, cfg)
    losses = np.array(history.step_losses)
    moving = np.convolve(losses, np.ones(50) / 50, mode="valid")
    decreasing = bool(np.all(np.diff(moving) < 0))
    fa = evaluate(model, samples, timing=False).foreground_accuracy
    ok = len(losses) == 200 and fa >= 0.95 and decreasing and losses[-1] < losses[0]
    acceptance_line("overfit oracle", ok,
                    f"train FA={fa:.4f}, moving average strictly decreasing={decreasing}, "
                    f"loss {losses[0]:.3f}->{losses[-1]:.3f}")


def test_schedule_identity(acceptance_line):
    cfg = TrainConfig()
    steps_per_epoch = -(-5742 // cfg.batch_size)
    total, warmup = cfg.epochs * steps_per_epoch, cfg.warmup_epochs * steps_per_epoch
    at_warmup = lr_schedule(warmup, total, warmup, cfg.base_lr)
    at_mid = lr_schedule(warmup + (total - warmup) // 2, total, warmup, cfg.base_lr)
    at_end = lr_schedule(total - 1, total, warmup, cfg.base_lr)
    ok = at_warmup == 0.008 and abs(at_mid - 0.004) < 1e-12 and at_end < 1e-5
    acceptance_line("schedule identity", ok, f"warmup end={at_warmup}, midpoint={at_mid}, final={at_end:.2e}")


@pytest.mark.skipif(not (os.environ.get("DRSNET_UAS") or os.environ.get("DRSNET_BPS")),
                    reason="set DRSNET_UAS and/or DRSNET_BPS to corpus directories")
def test_full_reproduction(acceptance_line, tmp_path):
    script = Path(__file__).resolve().parents[1] / "scripts" / "reproduce.py"
    argv = [sys.executable, str(script), "--out", str(tmp_path)]
    for flag, var in (("--uas", "DRSNET_UAS"), ("--bps", "DRSNET_BPS")):
        if os.environ.get(var):
            argv += [flag, os.environ[var]]
    result = subprocess.run(argv, capture_output=True, text=True)
    acceptance_line("full reproduction (logged, no tolerance)", result.returncode == 0,
                    result.stdout.strip().replace("\n", " ; ") or result.stderr[-300:])
