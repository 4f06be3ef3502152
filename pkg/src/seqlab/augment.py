"""Weak / medium / strong augmentation built from the RandAugment table.

All pixel arithmetic is done in float64, rounded half-to-even (``np.rint``)
and clamped to [0, 255]. Geometric transforms use nearest-neighbour sampling
at pixel centres and fill vacated pixels with mid-gray 128.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np

from .image import Image, read_pnm, write_pnm
from .rng import RngStream

FILL = 128.0


class AugmentError(ValueError):
    """Invalid augmentation parameter."""


class Kind(str, Enum):
    AUTOCONTRAST = "Autocontrast"
    BRIGHTNESS = "Brightness"
    COLOR = "Color"
    CONTRAST = "Contrast"
    EQUALIZE = "Equalize"
    IDENTITY = "Identity"
    POSTERIZE = "Posterize"
    ROTATE = "Rotate"
    SHARPNESS = "Sharpness"
    SHEAR_X = "ShearX"
    SHEAR_Y = "ShearY"
    SOLARIZE = "Solarize"
    TRANSLATE_X = "TranslateX"
    TRANSLATE_Y = "TranslateY"


@dataclass(frozen=True)
class TransformSpec:
    kind: Kind
    param_low: float = 0.0
    param_high: float = 0.0

    @property
    def has_param(self) -> bool:
        return self.kind not in _PARAMLESS


_PARAMLESS = frozenset({Kind.AUTOCONTRAST, Kind.EQUALIZE, Kind.IDENTITY})
# Enhancement kinds have their identity at 1, just outside the sampling range.
_ENHANCE = frozenset({Kind.BRIGHTNESS, Kind.COLOR, Kind.CONTRAST, Kind.SHARPNESS})

TRANSFORM_TABLE: tuple[TransformSpec, ...] = (
    TransformSpec(Kind.AUTOCONTRAST),
    TransformSpec(Kind.BRIGHTNESS, 0.05, 0.95),
    TransformSpec(Kind.COLOR, 0.05, 0.95),
    TransformSpec(Kind.CONTRAST, 0.05, 0.95),
    TransformSpec(Kind.EQUALIZE),
    TransformSpec(Kind.IDENTITY),
    TransformSpec(Kind.POSTERIZE, 4, 8),
    TransformSpec(Kind.ROTATE, -30, 30),
    TransformSpec(Kind.SHARPNESS, 0.05, 0.95),
    TransformSpec(Kind.SHEAR_X, -0.3, 0.3),
    TransformSpec(Kind.SHEAR_Y, -0.3, 0.3),
    TransformSpec(Kind.SOLARIZE, 0, 1),
    TransformSpec(Kind.TRANSLATE_X, -0.3, 0.3),
    TransformSpec(Kind.TRANSLATE_Y, -0.3, 0.3),
)
SPECS = {s.kind: s for s in TRANSFORM_TABLE}


class Level(str, Enum):
    WEAK = "weak"
    MEDIUM = "medium"
    STRONG = "strong"


@dataclass(frozen=True)
class AugmentPolicy:
    level: Level
    rand_augment_n: int
    use_cutout: bool
    cutout_fraction: float = 0.5
    flip_prob: float = 0.5
    max_translate: float = 0.125
    bidirectional: bool = False

    def __post_init__(self):
        expected = {Level.WEAK: (0, False), Level.MEDIUM: (1, True), Level.STRONG: (3, True)}
        n, cut = expected[Level(self.level)]
        if (self.rand_augment_n, self.use_cutout) != (n, cut):
            raise AugmentError(
                f"{self.level} policy needs rand_augment_n={n}, use_cutout={cut}"
            )
        if not 0.0 < self.cutout_fraction <= 1.0:
            raise AugmentError(f"cutout_fraction must be in (0, 1], got {self.cutout_fraction}")

    @classmethod
    def weak(cls, **kw) -> "AugmentPolicy":
        return cls(Level.WEAK, 0, False, **kw)

    @classmethod
    def medium(cls, **kw) -> "AugmentPolicy":
        return cls(Level.MEDIUM, 1, True, **kw)

    @classmethod
    def strong(cls, **kw) -> "AugmentPolicy":
        return cls(Level.STRONG, 3, True, **kw)


# ---------------------------------------------------------------- helpers


def _finish(x: np.ndarray) -> Image:
    np.rint(x, out=x)
    np.maximum(x, 0.0, out=x)
    np.minimum(x, 255.0, out=x)
    return Image._trusted(x.astype(np.uint8))


def _blend(degenerate: np.ndarray, img: np.ndarray, factor: float) -> np.ndarray:
    # factor 1 reproduces img exactly, factor 0 gives the degenerate image
    return img * factor + degenerate * (1.0 - factor)


def _luminance(x: np.ndarray) -> np.ndarray:
    if x.shape[2] == 1:
        return x[:, :, 0]
    return x[:, :, 0] * 0.299 + x[:, :, 1] * 0.587 + x[:, :, 2] * 0.114


@lru_cache(maxsize=64)
def _centres(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w]
    return ys + 0.5, xs + 0.5


def _sample(x: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    h, w = x.shape[:2]
    iy = np.floor(src_y).astype(np.int64)
    ix = np.floor(src_x).astype(np.int64)
    ok = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    out = np.full_like(x, FILL)
    out[ok] = x[iy[ok], ix[ok]]
    return out


def _rotate(x, degrees):
    h, w = x.shape[:2]
    yc, xc = _centres(h, w)
    cy, cx = h / 2.0, w / 2.0
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    dy, dx = yc - cy, xc - cx
    # inverse map of a counter-clockwise rotation (y axis points down)
    return _sample(x, -s * dx + c * dy + cy, c * dx + s * dy + cx)


def _shear_x(x, rate):
    h, w = x.shape[:2]
    yc, xc = _centres(h, w)
    return _sample(x, yc, xc + rate * (yc - h / 2.0))


def _shear_y(x, rate):
    h, w = x.shape[:2]
    yc, xc = _centres(h, w)
    return _sample(x, yc + rate * (xc - w / 2.0), xc)


def _shift(x, dy: float, dx: float):
    h, w = x.shape[:2]
    yc, xc = _centres(h, w)
    return _sample(x, yc - dy, xc - dx)


def _autocontrast(x):
    out = x.copy()
    for ch in range(x.shape[2]):
        lo, hi = x[:, :, ch].min(), x[:, :, ch].max()
        if hi > lo:
            out[:, :, ch] = (x[:, :, ch] - lo) * 255.0 / (hi - lo)
    return out


def _equalize(x):
    out = x.copy()
    for ch in range(x.shape[2]):
        band = x[:, :, ch].astype(np.int64)
        hist = np.bincount(band.ravel(), minlength=256)
        nonzero = hist[hist > 0]
        if nonzero.size <= 1:
            continue
        step = (int(nonzero.sum()) - int(nonzero[-1])) // 255
        if step == 0:
            continue
        lut = (step // 2 + np.concatenate(([0], np.cumsum(hist)[:-1]))) // step
        out[:, :, ch] = np.minimum(lut, 255)[band]
    return out


def _smooth(x):
    # 3x3 kernel [[1,1,1],[1,5,1],[1,1,1]] / 13 on the interior, border untouched
    h, w = x.shape[:2]
    out = x.copy()
    if h < 3 or w < 3:
        return out
    acc = 4.0 * x[1:-1, 1:-1]
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            acc = acc + x[dy : dy + h - 2, dx : dx + w - 2]
    out[1:-1, 1:-1] = acc / 13.0
    return out


def _check_magnitude(spec: TransformSpec, magnitude: float) -> None:
    if not spec.has_param:
        return
    if not math.isfinite(magnitude):
        raise AugmentError(f"{spec.kind.value}: non-finite magnitude {magnitude}")
    if spec.kind in _ENHANCE and magnitude == 1.0:
        return
    if not spec.param_low <= magnitude <= spec.param_high:
        raise AugmentError(
            f"{spec.kind.value}: magnitude {magnitude} outside "
            f"[{spec.param_low}, {spec.param_high}]"
        )


# ---------------------------------------------------------------- operations


def apply_transform(
    img: Image,
    spec: TransformSpec,
    magnitude: float,
    rng: RngStream | None = None,
    *,
    bidirectional: bool = False,
) -> Image:
    """Apply one table transform at ``magnitude``.

    Enhancement kinds (Brightness, Color, Contrast, Sharpness) blend towards a
    degenerate image with factor ``magnitude``; 1 is accepted as the exact
    identity. With ``bidirectional`` the factor becomes ``1 +/- magnitude``,
    the sign drawn from ``rng``.
    """
    if not isinstance(spec, TransformSpec):
        raise TypeError(f"expected TransformSpec, got {type(spec).__name__}")
    try:
        kind = Kind(spec.kind)
    except ValueError:
        raise NotImplementedError(f"unsupported transform kind {spec.kind!r}") from None
    _check_magnitude(spec, magnitude)
    x = img.pixels.astype(np.float64)

    if kind is Kind.IDENTITY:
        return img
    if kind is Kind.AUTOCONTRAST:
        return _finish(_autocontrast(x))
    if kind is Kind.EQUALIZE:
        return _finish(_equalize(x))
    if kind is Kind.POSTERIZE:
        bits = int(round(magnitude))
        mask = (0xFF << (8 - bits)) & 0xFF
        return Image._trusted(img.pixels & np.uint8(mask))
    if kind is Kind.SOLARIZE:
        threshold = magnitude * 255.0
        return _finish(np.where(x > threshold, 255.0 - x, x))
    if kind is Kind.ROTATE:
        return _finish(_rotate(x, magnitude))
    if kind is Kind.SHEAR_X:
        return _finish(_shear_x(x, magnitude))
    if kind is Kind.SHEAR_Y:
        return _finish(_shear_y(x, magnitude))
    if kind is Kind.TRANSLATE_X:
        return _finish(_shift(x, 0.0, magnitude * img.width))
    if kind is Kind.TRANSLATE_Y:
        return _finish(_shift(x, magnitude * img.height, 0.0))

    factor = magnitude
    if bidirectional and magnitude != 1.0:
        if rng is None:
            raise AugmentError("bidirectional enhancement needs an rng")
        factor = 1.0 + magnitude if rng.bernoulli(0.5) else 1.0 - magnitude
    if kind is Kind.BRIGHTNESS:
        return _finish(_blend(np.zeros_like(x), x, factor))
    if kind is Kind.COLOR:
        if img.channels == 1:
            return img
        return _finish(_blend(np.repeat(_luminance(x)[:, :, None], 3, axis=2), x, factor))
    if kind is Kind.CONTRAST:
        mean = math.floor(float(_luminance(x).mean()) + 0.5)
        return _finish(_blend(np.full_like(x, mean), x, factor))
    if kind is Kind.SHARPNESS:
        return _finish(_blend(_smooth(x), x, factor))
    raise NotImplementedError(kind)


def cutout_side(size_fraction: float, height: int, width: int) -> int:
    return math.floor(size_fraction * min(height, width) + 0.5)


def cutout(img: Image, size_fraction: float, rng: RngStream) -> Image:
    """Gray out a square centred on a uniformly drawn pixel.

    The centre is always drawn (row, then column) so the rng trace does not
    depend on the side length.
    """
    if not 0.0 < size_fraction <= 1.0:
        raise AugmentError(f"size_fraction must be in (0, 1], got {size_fraction}")
    h, w = img.height, img.width
    cy = rng.randint(h)
    cx = rng.randint(w)
    side = cutout_side(size_fraction, h, w)
    if side == 0:
        return img
    y0, x0 = max(cy - side // 2, 0), max(cx - side // 2, 0)
    y1, x1 = min(cy - side // 2 + side, h), min(cx - side // 2 + side, w)
    out = img.pixels.copy()
    out[y0:y1, x0:x1] = int(FILL)
    return Image._trusted(out)


def draw_transform(rng: RngStream) -> tuple[TransformSpec, float]:
    """One RandAugment draw: a table row, then a magnitude uniform in its range."""
    spec = TRANSFORM_TABLE[rng.randint(len(TRANSFORM_TABLE))]
    magnitude = rng.uniform(spec.param_low, spec.param_high) if spec.has_param else 0.0
    return spec, magnitude


def rand_augment(img: Image, n: int, rng: RngStream, *, bidirectional: bool = False) -> Image:
    if n < 0:
        raise AugmentError(f"n must be >= 0, got {n}")
    for _ in range(n):
        spec, magnitude = draw_transform(rng)
        img = apply_transform(img, spec, magnitude, rng, bidirectional=bidirectional)
    return img


def weak_augment(img: Image, rng: RngStream, flip_prob=0.5, max_translate=0.125) -> Image:
    """Random horizontal flip, then an integer translation of up to
    ``max_translate`` of each side."""
    x = img.pixels
    if rng.bernoulli(flip_prob):
        x = x[:, ::-1]
    max_dy = math.floor(max_translate * img.height + 0.5)
    max_dx = math.floor(max_translate * img.width + 0.5)
    dy = rng.randint(2 * max_dy + 1) - max_dy
    dx = rng.randint(2 * max_dx + 1) - max_dx
    if dy == 0 and dx == 0:
        return img if x is img.pixels else Image._trusted(x.copy())
    out = np.full_like(x, int(FILL))
    h, w = img.height, img.width
    out[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] = x[
        max(-dy, 0) : h + min(-dy, 0), max(-dx, 0) : w + min(-dx, 0)
    ]
    return Image._trusted(out)


def augment(img: Image, policy: AugmentPolicy, rng: RngStream) -> Image:
    out = weak_augment(img, rng, policy.flip_prob, policy.max_translate)
    if policy.rand_augment_n:
        out = rand_augment(out, policy.rand_augment_n, rng, bidirectional=policy.bidirectional)
    if policy.use_cutout:
        out = cutout(out, policy.cutout_fraction, rng)
    return out


# ---------------------------------------------------------------- fixtures


def read_fixture_case(case_dir) -> tuple[Image, Image, dict[str, str]]:
    """Load ``in.ppm``, ``out.ppm`` and ``params.txt`` (key=value lines)."""
    case_dir = Path(case_dir)
    params = {}
    for line in (case_dir / "params.txt").read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            params[key.strip()] = value.strip()
    return read_pnm(case_dir / "in.ppm"), read_pnm(case_dir / "out.ppm"), params


def write_fixture_case(case_dir, src: Image, expected: Image, params: dict) -> None:
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    write_pnm(case_dir / "in.ppm", src)
    write_pnm(case_dir / "out.ppm", expected)
    (case_dir / "params.txt").write_text("".join(f"{k}={v}\n" for k, v in params.items()))
