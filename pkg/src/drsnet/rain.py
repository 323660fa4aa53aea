"""Synthetic raindrop streaks.

A sparse Bernoulli seed map is convolved with a tilted rectangular Gaussian
kernel to get a streak mask in [0, 1], which is alpha-blended onto the image
towards a bright streak colour.

Geometry conventions used throughout:

* An axis-aligned streak is vertical: ``kernel_length`` rows by
  ``kernel_width`` columns.
* A positive ``angle`` (degrees) leans the top of the streak to the right.
* Seeds are placed on the image torus, so streaks that start near one border
  continue from the opposite border. This models rain seeded just outside the
  frame and keeps the coverage statistics identical at every pixel.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

LENGTH_RANGE = (40, 60)
WIDTH_CHOICES = (3, 5, 7)
ANGLE_RANGE = (-30.0, 30.0)
TRANSPARENCY_RANGE = (0.6, 0.9)
INTENSITY_RANGE = (1 / 250, 1 / 245)
STREAK_COLOR = 255.0
# Kernel entries below this cannot move an 8-bit pixel by half a grey level
# (255 / 512 < 0.5), so they are dropped from the streak footprint.
KERNEL_CUTOFF = 1 / 512


@dataclass(frozen=True)
class RainParams:
    kernel_length: int
    kernel_width: int
    angle: float
    transparency: float
    intensity: float

    def validate(self, strict: bool = True) -> "RainParams":
        """Check the fields.

        ``strict`` enforces the sampling ranges. With ``strict=False`` only
        physical sanity is required (positive sizes, fractions in [0, 1]),
        which lets tests and callers explore values outside the default
        ranges, such as zero intensity.
        """
        if not (isinstance(self.kernel_length, (int, np.integer)) and isinstance(self.kernel_width, (int, np.integer))):
            raise ValueError("kernel_length and kernel_width must be integers")
        if self.kernel_length < 1 or self.kernel_width < 1:
            raise ValueError("kernel sizes must be positive")
        if not 0.0 <= self.transparency <= 1.0 or not 0.0 <= self.intensity <= 1.0:
            raise ValueError("transparency and intensity must lie in [0, 1]")
        if strict:
            checks = [
                (LENGTH_RANGE[0] <= self.kernel_length <= LENGTH_RANGE[1], "kernel_length"),
                (self.kernel_width in WIDTH_CHOICES, "kernel_width"),
                (ANGLE_RANGE[0] <= self.angle <= ANGLE_RANGE[1], "angle"),
                (TRANSPARENCY_RANGE[0] <= self.transparency <= TRANSPARENCY_RANGE[1], "transparency"),
                (INTENSITY_RANGE[0] <= self.intensity <= INTENSITY_RANGE[1], "intensity"),
            ]
            bad = [name for ok, name in checks if not ok]
            if bad:
                raise ValueError(f"RainParams out of range: {', '.join(bad)} ({self})")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_length"] = int(d["kernel_length"])
        d["kernel_width"] = int(d["kernel_width"])
        return d


def sample_rain_params(rng: np.random.Generator) -> RainParams:
    """Draw one configuration uniformly from the sampling ranges."""
    length = int(rng.integers(LENGTH_RANGE[0], LENGTH_RANGE[1] + 1))
    width = int(rng.choice(WIDTH_CHOICES))
    angle = float(rng.uniform(*ANGLE_RANGE))
    transparency = float(rng.uniform(*TRANSPARENCY_RANGE))
    intensity = float(rng.uniform(*INTENSITY_RANGE))
    return RainParams(length, width, angle, transparency, intensity)


@dataclass(frozen=True)
class StreakKernel:
    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def footprint(self) -> int:
        """Number of pixels a single streak touches."""
        return int(np.count_nonzero(self.values))


def _axis_aligned(length: int, width: int) -> np.ndarray:
    # Separable Gaussian sampled at pixel centres; sigma = side / 4 so the
    # rectangle spans +-2 sigma in both directions.
    u = np.arange(length) - (length - 1) / 2
    v = np.arange(width) - (width - 1) / 2
    g_long = np.exp(-0.5 * (u / (length / 4)) ** 2)
    g_short = np.exp(-0.5 * (v / (width / 4)) ** 2)
    k = np.outer(g_long, g_short)
    return k / k.max()


def build_streak_kernel(length: int, width: int, angle: float) -> StreakKernel:
    if length < 1 or width < 1:
        raise ValueError(f"kernel sizes must be positive, got {length}x{width}")
    base = _axis_aligned(length, width)
    if angle == 0:
        return StreakKernel(np.where(base < KERNEL_CUTOFF, 0.0, base))
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    # Tight box around the rotated rectangle (rounded with a little slack for
    # float noise), then grown to the parity of the base sides so the
    # centres line up.
    out_h = math.ceil(length * abs(c) + width * abs(s) - 1e-9)
    out_w = math.ceil(length * abs(s) + width * abs(c) - 1e-9)
    out_h += (out_h - length) % 2
    out_w += (out_w - width) % 2
    y = np.arange(out_h) - (out_h - 1) / 2
    x = np.arange(out_w) - (out_w - 1) / 2
    yy, xx = np.meshgrid(y, x, indexing="ij")
    # Inverse map output pixel -> axis-aligned (row, col) coordinates.
    u = yy * c - xx * s
    v = xx * c + yy * s
    # A one-pixel zero ring lets the interpolation fade out across the last
    # half pixel instead of cutting off at the outermost sample centres.
    padded = np.pad(base, 1)
    rows = u + (length - 1) / 2 + 1
    cols = v + (width - 1) / 2 + 1
    values = ndimage.map_coordinates(padded, [rows, cols], order=1, mode="constant", cval=0.0)
    values /= values.max()
    values[values < KERNEL_CUTOFF] = 0.0
    # Drop empty border rows/columns so the box is tight.
    nz_r = np.flatnonzero(values.any(axis=1))
    nz_c = np.flatnonzero(values.any(axis=0))
    r0, r1 = min(nz_r[0], out_h - 1 - nz_r[-1]), max(nz_r[-1], out_h - 1 - nz_r[0])
    c0, c1 = min(nz_c[0], out_w - 1 - nz_c[-1]), max(nz_c[-1], out_w - 1 - nz_c[0])
    values = values[r0:r1 + 1, c0:c1 + 1]
    return StreakKernel(values)


def _seed_map(height: int, width: int, intensity: float, rng: np.random.Generator) -> np.ndarray:
    return rng.random((height, width)) < intensity


def generate_rain_mask(height: int, width: int, params: RainParams, rng: np.random.Generator,
                       kernel: StreakKernel | None = None) -> np.ndarray:
    """Streak mask in [0, 1] of shape (height, width)."""
    params.validate(strict=False)
    if kernel is None:
        kernel = build_streak_kernel(params.kernel_length, params.kernel_width, params.angle)
    if height < kernel.height or width < kernel.width:
        raise ValueError(
            f"image {width}x{height} is smaller than the streak kernel {kernel.width}x{kernel.height}")
    seeds = _seed_map(height, width, params.intensity, rng).astype(np.float64)
    if not seeds.any():
        return np.zeros((height, width))
    mask = ndimage.convolve(seeds, kernel.values, mode="wrap")
    return np.clip(mask, 0.0, 1.0)


def composite_rain(image: np.ndarray, mask: np.ndarray, transparency: float,
                   streak_color: float = STREAK_COLOR) -> np.ndarray:
    """Blend streaks onto an H x W x 3 image; returns float64 in [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if img.ndim != 3 or img.shape[:2] != m.shape:
        raise ValueError(f"image {img.shape} and mask {m.shape} do not match")
    if not 0.0 <= transparency <= 1.0:
        raise ValueError(f"transparency must lie in [0, 1], got {transparency}")
    alpha = (transparency * m)[..., None]
    return np.clip((1.0 - alpha) * img + alpha * streak_color, 0.0, 255.0)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Round half to even, then clamp to 8 bits."""
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def add_rain(image: np.ndarray, rng: np.random.Generator, params: RainParams | None = None,
             streak_color: float = STREAK_COLOR) -> tuple[np.ndarray, RainParams]:
    """Sample parameters (unless given), render one mask and composite it."""
    if params is None:
        params = sample_rain_params(rng)
    mask = generate_rain_mask(image.shape[0], image.shape[1], params, rng)
    return to_uint8(composite_rain(image, mask, params.transparency, streak_color)), params


def expected_coverage(params: RainParams) -> float:
    """Streak area times seed probability, ignoring overlap (may exceed 1)."""
    return params.kernel_length * params.kernel_width * params.intensity


def union_coverage(intensity: float, footprint: int) -> float:
    """Probability that a pixel lies under at least one streak."""
    return 1.0 - (1.0 - intensity) ** footprint


def covered_fraction(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size
