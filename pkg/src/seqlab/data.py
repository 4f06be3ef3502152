"""Datasets, labeled/unlabeled splits and the synthetic blob generator."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import Image, ImageError, read_pnm
from .rng import RngStream


class DataError(ValueError):
    """Dataset construction or loading failure."""


@dataclass(frozen=True)
class Dataset:
    """Images with integer labels in [0, num_classes).

    ``indices`` records each item's position in the source dataset when the
    dataset was carved out of a larger one. Unlabeled splits keep the true
    labels for diagnostics (pseudo-label accuracy); training never reads them.
    """

    images: tuple[Image, ...]
    labels: tuple[int, ...]
    num_classes: int
    name: str = ""
    indices: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))
        object.__setattr__(self, "indices", tuple(self.indices) or tuple(range(len(self.images))))
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        bad = [y for y in self.labels if not 0 <= y < self.num_classes]
        if bad:
            raise DataError(f"label {bad[0]} outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.images)

    def subset(self, idx, name=None) -> "Dataset":
        idx = list(idx)
        return Dataset(
            [self.images[i] for i in idx],
            [self.labels[i] for i in idx],
            self.num_classes,
            name if name is not None else self.name,
            [self.indices[i] for i in idx],
        )

    def class_indices(self) -> list[list[int]]:
        out = [[] for _ in range(self.num_classes)]
        for i, y in enumerate(self.labels):
            out[y].append(i)
        return out

    def array(self) -> np.ndarray:
        """(N, H*W*C) float inputs scaled to [0, 1]."""
        if not self.images:
            return np.zeros((0, 0))
        return np.stack([im.pixels.reshape(-1) for im in self.images]).astype(np.float64) / 255.0


@dataclass(frozen=True)
class SplitSpec:
    n_labels: int
    balanced: bool = True
    seed: int = 0
    include_labeled_in_unlabeled: bool = True


@dataclass(frozen=True)
class LongTailSpec:
    lambda_imb: float
    N1: int
    L: int
    beta: float

    def __post_init__(self):
        if not self.lambda_imb > 1:
            raise DataError(f"imbalance ratio must be > 1, got {self.lambda_imb}")
        if not 0 < self.beta <= 1:
            raise DataError(f"beta must be in (0, 1], got {self.beta}")
        if self.L < 1 or self.N1 < 1:
            raise DataError("L and N1 must be positive")


def _round(x: float) -> int:
    return math.floor(x + 0.5)


def make_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    n = len(ds)
    if not 0 <= spec.n_labels <= n:
        raise DataError(f"n_labels={spec.n_labels} for a dataset of {n}")
    rng = RngStream(spec.seed).derive("split")
    if spec.balanced:
        L = ds.num_classes
        if spec.n_labels % L:
            raise DataError(f"balanced split needs n_labels divisible by {L}")
        per_class = spec.n_labels // L
        chosen = []
        for k, members in enumerate(ds.class_indices()):
            if len(members) < per_class:
                raise DataError(f"class {k} has {len(members)} examples, need {per_class}")
            order = rng.derive(k).permutation(len(members))
            chosen += [members[j] for j in order[:per_class]]
        chosen.sort()
    else:
        chosen = sorted(rng.permutation(n)[: spec.n_labels])
    picked = set(chosen)
    rest = [i for i in range(n) if i not in picked]
    unlabeled = sorted(chosen + rest) if spec.include_labeled_in_unlabeled else rest
    return ds.subset(chosen, f"{ds.name}/labeled"), ds.subset(unlabeled, f"{ds.name}/unlabeled")


def long_tail_counts(spec: LongTailSpec) -> list[int]:
    L = spec.L
    if L == 1:
        return [spec.N1]
    return [
        max(1, _round(spec.N1 * spec.lambda_imb ** (-(k - 1) / (L - 1)))) for k in range(1, L + 1)
    ]


def make_long_tail(ds: Dataset, spec: LongTailSpec, seed: int = 0) -> tuple[Dataset, Dataset]:
    if spec.L != ds.num_classes:
        raise DataError(f"spec has L={spec.L}, dataset has {ds.num_classes} classes")
    counts = long_tail_counts(spec)
    rng = RngStream(seed).derive("long-tail")
    labeled, unlabeled = [], []
    for k, members in enumerate(ds.class_indices()):
        if len(members) < counts[k]:
            raise DataError(f"class {k} has {len(members)} examples, need {counts[k]}")
        order = rng.derive(k).permutation(len(members))
        keep = [members[j] for j in order[: counts[k]]]
        n_lab = min(counts[k], max(1, _round(spec.beta * counts[k])))
        labeled += keep[:n_lab]
        unlabeled += keep[n_lab:]
    return (
        ds.subset(sorted(labeled), f"{ds.name}/lt-labeled"),
        ds.subset(sorted(unlabeled), f"{ds.name}/lt-unlabeled"),
    )


# ---------------------------------------------------------------- synthetic


BACKGROUND = 64
FOREGROUND = 192


def class_template(k: int, side: int) -> np.ndarray:
    """Mirror-symmetric on/off pattern for class ``k`` as a (side, side) float array.

    Left-half cells are switched on at random (stream keyed by ``k`` only), then
    mirrored, so a horizontal flip never changes the class.
    """
    rng = RngStream(0x5EED_B10B).derive("template", k)
    half = (side + 1) // 2
    on = np.array([[rng.bernoulli(0.5) for _ in range(half)] for _ in range(side)])
    full = np.concatenate([on, on[:, : side - half][:, ::-1]], axis=1)
    return np.where(full, float(FOREGROUND), float(BACKGROUND))


def synth_blobs(L: int, per_class: int, side: int = 8, noise: float = 0.3, seed: int = 0) -> Dataset:
    """``per_class`` noisy copies of each class template, ordered class-major.

    ``noise`` is the Gaussian standard deviation as a fraction of 255.
    """
    if side < 4:
        raise DataError(f"side must be >= 4, got {side}")
    gen = np.random.Generator(np.random.PCG64(RngStream(seed).derive("blobs").seed))
    images, labels = [], []
    for k in range(L):
        base = class_template(k, side)
        for _ in range(per_class):
            x = base + gen.standard_normal(base.shape) * (noise * 255.0) if noise else base
            images.append(Image(np.clip(np.rint(x), 0, 255).astype(np.uint8)[:, :, None]))
            labels.append(k)
    return Dataset(images, labels, L, f"blobs-L{L}-s{side}")


# ---------------------------------------------------------------- directories


def load_directory(path: str | os.PathLike) -> Dataset:
    """Read ``labels.tsv`` (first line ``#classes=<L>``) and the PPM/PGM files it names."""
    root = Path(path)
    tsv = root / "labels.tsv"
    try:
        lines = tsv.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{tsv}: {exc}") from exc
    num_classes = None
    images, labels = [], []
    shape = None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "classes":
                try:
                    num_classes = int(value)
                except ValueError:
                    raise DataError(f"{tsv}:{lineno}: bad class count {value!r}") from None
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{tsv}:{lineno}: expected 'filename<TAB>label'")
        name, label = parts
        try:
            y = int(label)
        except ValueError:
            raise DataError(f"{tsv}:{lineno}: bad label {label!r}") from None
        if num_classes is not None and not 0 <= y < num_classes:
            raise DataError(f"{tsv}:{lineno}: label {y} outside [0, {num_classes})")
        try:
            img = read_pnm(root / name)
        except ImageError as exc:
            raise DataError(str(exc)) from exc
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(f"{root / name}: shape {img.shape} differs from {shape}")
        images.append(img)
        labels.append(y)
    if num_classes is None:
        if images:
            raise DataError(f"{tsv}: missing '#classes=<L>' header")
        num_classes = 0
    listed = {line.split("\t")[0] for line in lines if line and not line.startswith("#")}
    for f in sorted(root.iterdir()):
        if f.suffix.lower() in (".ppm", ".pgm") and f.name not in listed:
            raise DataError(f"{f}: no label in {tsv.name}")
    return Dataset(images, labels, num_classes, root.name)
