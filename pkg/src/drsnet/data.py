"""Image + binary-mask corpora and add-rain benchmark materialization."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .rain import STREAK_COLOR, add_rain

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg")
MASK_SUFFIX = "_mask"
MASK_THRESHOLD = 128
SIZE_MULTIPLE = 16
LAYOUTS = ("auto", "paired", "suffix")


class CorpusError(ValueError):
    """The corpus on disk cannot be used as a training or evaluation set."""


@dataclass(frozen=True)
class SampleRef:
    source_id: str
    image_path: Path
    mask_path: Path


@dataclass
class Sample:
    source_id: str
    image: np.ndarray   # H x W x 3 uint8 RGB
    mask: np.ndarray    # H x W uint8 in {0, 1}


def check_size(size: tuple[int, int]) -> tuple[int, int]:
    """Validate a (width, height) target."""
    w, h = size
    if w <= 0 or h <= 0 or w % SIZE_MULTIPLE or h % SIZE_MULTIPLE:
        raise ValueError(f"size {w}x{h} must be positive and divisible by {SIZE_MULTIPLE}")
    return int(w), int(h)


def _images_in(folder: Path) -> dict[str, Path]:
    found = {}
    for p in sorted(folder.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_EXTS:
            found.setdefault(p.stem, p)
    return found


def detect_layout(root: Path) -> str:
    root = Path(root)
    return "paired" if (root / "images").is_dir() and (root / "masks").is_dir() else "suffix"


def load_corpus(root, layout: str = "auto", on_unreadable: str = "raise") -> list[SampleRef]:
    """List the samples under ``root`` in lexicographic order of their ids.

    ``paired`` expects ``images/<id>.<ext>`` with ``masks/<id>.<ext>``;
    ``suffix`` expects ``<id>.<ext>`` next to ``<id>_mask.<ext>``. Every image is
    opened once to verify it; ``on_unreadable`` chooses between raising and
    skipping with a warning.
    """
    root = Path(root)
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    if on_unreadable not in ("raise", "skip"):
        raise ValueError("on_unreadable must be 'raise' or 'skip'")
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")
    if layout == "auto":
        layout = detect_layout(root)
    if layout == "paired":
        images, masks = _images_in(root / "images"), _images_in(root / "masks")
    else:
        files = _images_in(root)
        masks = {k[: -len(MASK_SUFFIX)]: v for k, v in files.items() if k.endswith(MASK_SUFFIX)}
        images = {k: v for k, v in files.items() if not k.endswith(MASK_SUFFIX)}
    if not images:
        raise CorpusError(f"no images found under {root} ({layout} layout)")
    missing = sorted(set(images) - set(masks))
    if missing:
        raise CorpusError(f"{len(missing)} image(s) without a mask, e.g. {missing[:5]}")
    refs = []
    for sid in sorted(images):
        ref = SampleRef(sid, images[sid], masks[sid])
        try:
            for p in (ref.image_path, ref.mask_path):
                with Image.open(p) as im:
                    im.verify()
        except Exception as exc:
            if on_unreadable == "raise":
                raise CorpusError(f"unreadable file for sample {sid}: {exc}") from exc
            log.warning("skipping unreadable sample %s: %s", sid, exc)
            continue
        refs.append(ref)
    if not refs:
        raise CorpusError(f"no readable samples under {root}")
    return refs


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= MASK_THRESHOLD).astype(np.uint8)


def read_sample(ref: SampleRef) -> Sample:
    image, mask = read_image(ref.image_path), read_mask(ref.mask_path)
    if image.shape[:2] != mask.shape:
        raise CorpusError(f"sample {ref.source_id}: image {image.shape[:2]} and mask {mask.shape} differ")
    return Sample(ref.source_id, image, mask)


def resize_sample(sample: Sample, size: tuple[int, int]) -> Sample:
    """Bilinear for the image, nearest neighbour for the mask."""
    w, h = check_size(size)
    if sample.image.shape[:2] == (h, w):
        return Sample(sample.source_id, sample.image.copy(), sample.mask.copy())
    image = cv2.resize(sample.image, (w, h), interpolation=cv2.INTER_LINEAR)
    mask = cv2.resize(sample.mask, (w, h), interpolation=cv2.INTER_NEAREST)
    return Sample(sample.source_id, image, mask)


def load_samples(refs: list[SampleRef], size: tuple[int, int]) -> list[Sample]:
    return [resize_sample(read_sample(r), size) for r in refs]


def sample_rng(seed: int, index: int, epoch: int | None = None) -> np.random.Generator:
    """Per-sample generator keyed on (seed, index[, epoch]), independent of worker layout."""
    key = [int(seed), int(index)] if epoch is None else [int(seed), int(index), int(epoch)]
    return np.random.default_rng(np.random.SeedSequence(key))


def write_png(path, array: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path, format="PNG")


def _output_paths(out: Path, source_id: str, layout: str) -> tuple[Path, Path]:
    if layout == "paired":
        return out / "images" / f"{source_id}.png", out / "masks" / f"{source_id}.png"
    return out / f"{source_id}.png", out / f"{source_id}{MASK_SUFFIX}.png"


def build_add_rain_benchmark(refs: list[SampleRef], out_dir, seed: int, size: tuple[int, int],
                             streak_color: float = STREAK_COLOR, layout: str = "paired") -> list[dict]:
    """Write a rain-overlaid copy of every sample, mirroring the input ``layout``.

    Masks are written as 0/255 PNGs and ``manifest.txt`` holds one JSON record
    per image. The result depends only on the corpus contents, ``seed``,
    ``size`` and ``streak_color``.
    """
    size = check_size(size)
    if layout not in ("paired", "suffix"):
        raise ValueError(f"layout must be 'paired' or 'suffix', got {layout!r}")
    out = Path(out_dir)
    records = []
    for i, ref in enumerate(refs):
        sample = resize_sample(read_sample(ref), size)
        rained, params = add_rain(sample.image, sample_rng(seed, i), streak_color=streak_color)
        image_path, mask_path = _output_paths(out, ref.source_id, layout)
        write_png(image_path, rained)
        write_png(mask_path, sample.mask * 255)
        records.append({"index": i, "source_id": ref.source_id, "seed": seed,
                        "size": list(size), "streak_color": streak_color, **params.to_dict()})
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.txt", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def synthetic_sample(size: tuple[int, int], rng: np.random.Generator, source_id: str = "synthetic") -> Sample:
    """Random ellipses and rectangles (foreground) over a smooth noisy background."""
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = rng.uniform(40, 160, size=3)
    gradient = rng.uniform(-40, 40, size=3)
    background = base + gradient * (xx / w)[..., None] + rng.normal(0, 8, size=(h, w, 3))
    image = np.clip(background, 0, 255).astype(np.uint8)
    mask = np.zeros((h, w), np.uint8)
    for _ in range(int(rng.integers(1, 4))):
        color = tuple(int(c) for c in rng.uniform(0, 255, size=3))
        layer = np.zeros((h, w), np.uint8)
        cx, cy = int(rng.integers(w // 8, w - w // 8)), int(rng.integers(h // 8, h - h // 8))
        if rng.random() < 0.5:
            axes = (int(rng.integers(w // 12, w // 4)), int(rng.integers(h // 12, h // 4)))
            cv2.ellipse(layer, (cx, cy), axes, float(rng.uniform(0, 180)), 0, 360, 1, -1)
        else:
            dx, dy = int(rng.integers(w // 12, w // 4)), int(rng.integers(h // 12, h // 4))
            cv2.rectangle(layer, (cx - dx, cy - dy), (cx + dx, cy + dy), 1, -1)
        image[layer == 1] = color
        mask |= layer
    return Sample(source_id, image, mask)


def synthetic_corpus(n: int, size: tuple[int, int], seed: int = 0) -> list[Sample]:
    return [synthetic_sample(size, sample_rng(seed, i), f"shape_{i:04d}") for i in range(n)]


def write_corpus(samples: list[Sample], root, layout: str = "paired") -> None:
    """Write samples to disk in one of the layouts ``load_corpus`` reads."""
    root = Path(root)
    for s in samples:
        image_path, mask_path = _output_paths(root, s.source_id, layout)
        write_png(image_path, s.image)
        write_png(mask_path, s.mask * 255)
