"""Command-line experiment runner.

Verbs::

    seqlab run --config exp.txt [--out DIR] [--seed-override N]
    seqlab compare DIR_A DIR_B [--out report.csv]
    seqlab plot metrics.csv --kind {loss,accuracy,mask,reliability} [--out fig.svg]
    seqlab augment-preview image.ppm --kind strong [--seed-override N] [--out out.ppm]

Config files are flat ``key=value`` lines with section prefixes, e.g.::

    seeds=0,1,2
    train.algorithm=SequenceMatch
    train.total_iters=2000
    data.noise=0.3

``SEQLAB_THREADS`` caps how many seeds run at once (default 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .augment import SPECS, AugmentError, AugmentPolicy, Kind, apply_transform, augment
from .data import (
    DataError,
    Dataset,
    LongTailSpec,
    SplitSpec,
    load_directory,
    make_long_tail,
    make_split,
    synth_blobs,
)
from .experiments import DESK
from .image import ImageError, read_pnm, write_pnm
from .model import ModelConfig, ModelError
from .rng import RngStream
from .train import TrainConfig, TrainError, read_metrics_csv, train_loop

log = logging.getLogger("seqlab")


class CLIError(Exception):
    """User-facing failure; reported on stderr with a nonzero exit."""


# ---------------------------------------------------------------- config


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _parser_for(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _parse_floats
    return str


_TRAIN_DEFAULTS = TrainConfig()
_TRAIN_KEYS = {
    f.name: _parser_for(getattr(_TRAIN_DEFAULTS, f.name)) for f in fields(TrainConfig) if f.name != "seed"
}
_TRAIN_KEYS["preset"] = str

SCHEMA = {
    "seeds": _parse_ints,
    "out": str,
    **{f"train.{k}": p for k, p in _TRAIN_KEYS.items()},
    "model.hidden_dims": _parse_ints,
    "model.init_scale": float,
    "data.source": str,
    "data.path": str,
    "data.test_path": str,
    "data.classes": int,
    "data.per_class": int,
    "data.side": int,
    "data.noise": float,
    "data.seed": int,
    "data.test_per_class": int,
    "split.n_labels": int,
    "split.balanced": _parse_bool,
    "split.include_labeled_in_unlabeled": _parse_bool,
    "split.seed": int,
    "longtail.lambda": float,
    "longtail.N1": int,
    "longtail.beta": float,
}

DEFAULTS = {
    "seeds": (0,),
    "out": None,
    "train.algorithm": "SequenceMatch",
    "train.B": DESK["B"],
    "train.mu": DESK["mu"],
    "train.total_iters": DESK["iters"],
    "train.eval_every": DESK["iters"],
    "model.hidden_dims": DESK["hidden"],
    "model.init_scale": 1.0,
    "data.source": "synthetic",
    "data.classes": DESK["classes"],
    "data.per_class": (DESK["labels"] + DESK["unlabeled"]) // DESK["classes"],
    "data.side": DESK["side"],
    "data.noise": DESK["noise"],
    "data.seed": 0,
    "data.test_per_class": DESK["test_per_class"],
    "split.n_labels": DESK["labels"],
    "split.balanced": True,
    "split.include_labeled_in_unlabeled": False,
    "split.seed": 0,
}


@dataclass
class ExperimentConfig:
    """Parsed config: every key in ``values`` is a known schema key."""

    values: dict = field(default_factory=dict)
    source: str = "<config>"

    def get(self, key, default=None):
        if key in self.values:
            return self.values[key]
        return DEFAULTS.get(key, default)

    def section(self, prefix: str) -> dict:
        return {k[len(prefix) + 1 :]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.get("seeds"))

    def train_config(self, seed: int) -> TrainConfig:
        overrides = {k[6:]: DEFAULTS[k] for k in DEFAULTS if k.startswith("train.")}
        overrides.update(self.section("train"))
        algorithm = overrides.pop("algorithm")
        preset = overrides.pop("preset", "default")
        return TrainConfig.for_algorithm(algorithm, preset, seed=seed, **overrides)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        where = f"{source}:{lineno}"
        if not sep:
            raise CLIError(f"{where}: expected key=value, got {line!r}")
        if key not in SCHEMA:
            raise CLIError(f"{where}: unknown key {key!r}")
        if key in values:
            raise CLIError(f"{where}: duplicate key {key!r}")
        try:
            values[key] = SCHEMA[key](value)
        except ValueError as exc:
            raise CLIError(f"{where}: bad value for {key}: {exc}") from None
    cfg = ExperimentConfig(values, source)
    if not cfg.seeds:
        raise CLIError(f"{source}: seeds list is empty")
    try:
        cfg.train_config(cfg.seeds[0])
    except (TrainError, TypeError) as exc:
        raise CLIError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"{path}: {exc}") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------- run


@dataclass(frozen=True)
class _Splits:
    labeled: Dataset
    unlabeled: Dataset
    test: Dataset | None


def build_splits(cfg: ExperimentConfig) -> _Splits:
    """Datasets depend on ``data.*``, ``split.*`` and ``longtail.*`` only, so
    every seed of a run trains on the same data."""
    source = cfg.get("data.source")
    if source == "synthetic":
        L, side, noise = cfg.get("data.classes"), cfg.get("data.side"), cfg.get("data.noise")
        data_seed = cfg.get("data.seed")
        pool = synth_blobs(L, cfg.get("data.per_class"), side, noise, seed=data_seed)
        test = synth_blobs(L, cfg.get("data.test_per_class"), side, noise, seed=data_seed + 1_000_003)
    elif source == "directory":
        if cfg.get("data.path") is None:
            raise CLIError(f"{cfg.source}: data.source=directory needs data.path")
        pool = load_directory(cfg.get("data.path"))
        test = load_directory(cfg.get("data.test_path")) if cfg.get("data.test_path") else None
    else:
        raise CLIError(f"{cfg.source}: data.source must be 'synthetic' or 'directory', got {source!r}")
    lt = cfg.section("longtail")
    if lt:
        missing = {"lambda", "N1", "beta"} - set(lt)
        if missing:
            raise CLIError(f"{cfg.source}: long-tail split needs longtail.{sorted(missing)[0]}")
        spec = LongTailSpec(lt["lambda"], lt["N1"], pool.num_classes, lt["beta"])
        labeled, unlabeled = make_long_tail(pool, spec, seed=cfg.get("split.seed"))
    else:
        labeled, unlabeled = make_split(
            pool,
            SplitSpec(
                cfg.get("split.n_labels"),
                cfg.get("split.balanced"),
                cfg.get("split.seed"),
                cfg.get("split.include_labeled_in_unlabeled"),
            ),
        )
    return _Splits(labeled, unlabeled, test)


def _run_seed(cfg: ExperimentConfig, seed: int, out: str) -> str:
    splits = build_splits(cfg)
    if not len(splits.labeled):
        raise CLIError("labeled split is empty")
    first = splits.labeled.images[0]
    model_cfg = ModelConfig(
        first.height * first.width * first.channels,
        splits.labeled.num_classes,
        cfg.get("model.hidden_dims"),
        init_seed=seed,
        init_scale=cfg.get("model.init_scale"),
    )
    train_cfg = cfg.train_config(seed)
    log.info("seed %d: %s for %d iterations", seed, train_cfg.algorithm, train_cfg.total_iters)
    train_loop(train_cfg, model_cfg, splits.labeled, splits.unlabeled, splits.test, out_dir=out, tag=f"_{seed}")
    return str(Path(out) / f"metrics_{seed}.csv")


SUMMARY_METRICS = ("final_error", "best_error", "final_ece", "utilization", "mask_ratio")
SUMMARY_COLUMNS = ("metric", "mean", "std", "n")


def seed_statistics(rows: list[dict]) -> dict:
    """Per-seed summary values from one metrics CSV; absent when undefined."""
    evals = [r for r in rows if r["eval_error"] is not None]
    out = {}
    if evals:
        out["final_error"] = evals[-1]["eval_error"]
        out["best_error"] = min(r["eval_error"] for r in evals)
        out["final_ece"] = evals[-1]["eval_ece"]
    util = [r["utilization"] for r in rows if r["utilization"] is not None]
    if util:
        out["utilization"] = math.fsum(util) / len(util)
    masks = [r["mask_ratio"] for r in rows if r["mask_ratio"] is not None]
    if masks:
        out["mask_ratio"] = math.fsum(masks) / len(masks)
    return out


def summarize(per_seed: list[dict]) -> str:
    """summary.csv text: mean and population std of each metric across seeds."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for name in SUMMARY_METRICS:
        vals = [s[name] for s in per_seed if name in s]
        if vals:
            arr = np.array(vals, dtype=np.float64)
            w.writerow([name, repr(float(arr.mean())), repr(float(arr.std())), len(vals)])
        else:
            w.writerow([name, "", "", 0])
    return buf.getvalue()


def _threads() -> int:
    raw = os.environ.get("SEQLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CLIError(f"SEQLAB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CLIError(f"SEQLAB_THREADS must be a positive integer, got {raw!r}")
    return n


def run(config_path, out=None, seed_override=None) -> Path:
    cfg = load_config(config_path)
    out = out or cfg.get("out")
    if out is None:
        raise CLIError("no output directory: pass --out or set out= in the config")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = (seed_override,) if seed_override is not None else cfg.seeds
    workers = min(_threads(), len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_run_seed, [cfg] * len(seeds), seeds, [str(out)] * len(seeds)))
    else:
        paths = [_run_seed(cfg, s, str(out)) for s in seeds]
    per_seed = [seed_statistics(read_metrics_csv(p)) for p in paths]
    summary = out / "summary.csv"
    summary.write_text(summarize(per_seed))
    return summary


# ---------------------------------------------------------------- compare


def read_summary(directory) -> dict:
    path = Path(directory) / "summary.csv"
    try:
        text = path.read_text()
    except OSError:
        raise CLIError(f"{path}: missing summary") from None
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != SUMMARY_COLUMNS:
        raise CLIError(f"{path}: unexpected columns {list(header)}")
    table = {}
    for row in reader:
        if len(row) != len(SUMMARY_COLUMNS):
            raise CLIError(f"{path}: malformed row {row}")
        table[row[0]] = float(row[1]) if row[1] else None
    return table


def compare(dir_a, dir_b) -> list[tuple[str, float | None, float | None, float | None]]:
    """Rows of (metric, mean in A, mean in B, B - A)."""
    a, b = read_summary(dir_a), read_summary(dir_b)
    if list(a) != list(b):
        raise CLIError(f"summary schemas differ: {list(a)} vs {list(b)}")
    rows = []
    for name in a:
        va, vb = a[name], b[name]
        rows.append((name, va, vb, vb - va if va is not None and vb is not None else None))
    return rows


def format_comparison(rows, label_a="A", label_b="B") -> str:
    def cell(v):
        return "-" if v is None else f"{v:.4f}"

    lines = [f"{'metric':<12} {label_a:>10} {label_b:>10} {'diff':>10}"]
    for name, va, vb, d in rows:
        lines.append(f"{name:<12} {cell(va):>10} {cell(vb):>10} {cell(d):>10}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- plot

WIDTH, HEIGHT = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 56, 16, 24, 40
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

PLOT_COLUMNS = {
    "loss": ("total", "l_sup", "l_u_ce"),
    "accuracy": ("accuracy",),
    "mask": ("mask_ratio", "utilization"),
}
RELIABILITY_COLUMNS = ("bin_low", "bin_high", "count", "mean_conf", "mean_acc")


class PlotError(CLIError):
    pass


def _num(v: float) -> str:
    return f"{v:.2f}"


def _span(lo: float, hi: float) -> tuple[float, float]:
    return (lo, hi) if hi > lo else (lo - 0.5, lo + 0.5)


def px(v: float, lo: float, hi: float) -> float:
    """Data x to SVG x inside the plot frame."""
    return LEFT + (v - lo) / (hi - lo) * (WIDTH - LEFT - RIGHT)


def py(v: float, lo: float, hi: float) -> float:
    """Data y to SVG y (SVG y grows downwards)."""
    return HEIGHT - BOTTOM - (v - lo) / (hi - lo) * (HEIGHT - TOP - BOTTOM)


def _frame(title: str, xr, yr, xlabel: str) -> list[str]:
    x0, x1 = LEFT, WIDTH - RIGHT
    y0, y1 = HEIGHT - BOTTOM, TOP
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="16" text-anchor="middle">{title}</text>',
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    if xr is not None:
        parts += [
            f'<text x="{x0}" y="{y0 + 14}" text-anchor="middle">{xr[0]:g}</text>',
            f'<text x="{x1}" y="{y0 + 14}" text-anchor="middle">{xr[1]:g}</text>',
        ]
    if yr is not None:
        parts += [
            f'<text x="{x0 - 4}" y="{y0 + 4}" text-anchor="end">{yr[0]:.3g}</text>',
            f'<text x="{x0 - 4}" y="{y1 + 4}" text-anchor="end">{yr[1]:.3g}</text>',
        ]
    parts.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{HEIGHT - 8}" text-anchor="middle">{xlabel}</text>')
    return parts


def _read_csv(path) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            return list(reader.fieldnames or []), rows
    except OSError as exc:
        raise PlotError(f"{path}: {exc}") from None


def _line_chart(title: str, header: list[str], rows: list[dict], columns, y_range=None) -> str:
    if "iter" not in header:
        raise PlotError("metrics CSV has no 'iter' column")
    series = []
    for col in columns:
        source = "eval_error" if col == "accuracy" else col
        if source not in header:
            raise PlotError(f"unknown column {col!r}; available: {', '.join(header)}")
        pts = []
        for r in rows:
            if r[source] == "":
                continue
            v = float(r[source])
            pts.append((float(r["iter"]), 1.0 - v if col == "accuracy" else v))
        series.append((col, pts))
    all_pts = [p for _, pts in series for p in pts]
    if not all_pts:
        parts = _frame(title, None, None, "iteration")
    else:
        xr = _span(min(p[0] for p in all_pts), max(p[0] for p in all_pts))
        yr = y_range or _span(min(0.0, min(p[1] for p in all_pts)), max(p[1] for p in all_pts))
        parts = _frame(title, xr, yr, "iteration")
        for i, (name, pts) in enumerate(series):
            color = COLORS[i % len(COLORS)]
            coords = " ".join(f"{_num(px(x, *xr))},{_num(py(y, *yr))}" for x, y in pts)
            if pts:
                parts.append(
                    f'<polyline class="series" data-name="{name}" points="{coords}" '
                    f'fill="none" stroke="{color}" stroke-width="1.5"/>'
                )
            parts.append(
                f'<text x="{WIDTH - RIGHT - 4}" y="{TOP + 14 * (i + 1)}" text-anchor="end" fill="{color}">{name}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _reliability_chart(header: list[str], rows: list[dict]) -> str:
    missing = [c for c in RELIABILITY_COLUMNS if c not in header]
    if missing:
        raise PlotError(f"reliability CSV lacks column {missing[0]!r}")
    parts = _frame("reliability", (0.0, 1.0), (0.0, 1.0), "confidence")
    parts.append(
        f'<line class="diagonal" x1="{_num(px(0, 0, 1))}" y1="{_num(py(0, 0, 1))}" '
        f'x2="{_num(px(1, 0, 1))}" y2="{_num(py(1, 0, 1))}" stroke="gray" stroke-dasharray="4 3"/>'
    )
    for r in rows:
        if int(r["count"]) == 0:
            continue
        lo, hi, acc = float(r["bin_low"]), float(r["bin_high"]), float(r["mean_acc"])
        x, w = px(lo, 0, 1), px(hi, 0, 1) - px(lo, 0, 1)
        y = py(acc, 0, 1)
        parts.append(
            f'<rect class="bar" x="{_num(x)}" y="{_num(y)}" width="{_num(w)}" '
            f'height="{_num(py(0, 0, 1) - y)}" fill="{COLORS[0]}" fill-opacity="0.7" stroke="white"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot(csv_path, kind: str, out=None, columns=None) -> Path:
    header, rows = _read_csv(csv_path)
    if kind == "reliability":
        svg = _reliability_chart(header, rows)
    elif kind in PLOT_COLUMNS:
        # accuracy and ratios live in [0, 1]; custom columns get a fitted range
        bounded = kind in ("accuracy", "mask") and not columns
        svg = _line_chart(kind, header, rows, columns or PLOT_COLUMNS[kind], (0.0, 1.0) if bounded else None)
    else:
        raise PlotError(f"unknown plot kind {kind!r}")
    out = Path(out) if out else Path(csv_path).with_suffix(f".{kind}.svg")
    out.write_text(svg)
    return out


# ---------------------------------------------------------------- augment-preview


def augment_preview(image_path, kind: str, seed: int = 0, out=None) -> Path:
    """Apply a policy (weak/medium/strong) or one table transform
    (``Rotate`` or ``Rotate:15``) to a PNM image."""
    img = read_pnm(image_path)
    rng = RngStream(seed).derive("preview")
    policies = {"weak": AugmentPolicy.weak, "medium": AugmentPolicy.medium, "strong": AugmentPolicy.strong}
    if kind in policies:
        result = augment(img, policies[kind](), rng)
    else:
        name, _, mag = kind.partition(":")
        try:
            spec = SPECS[Kind(name)]
        except ValueError:
            choices = ", ".join([*policies, *(k.value for k in Kind)])
            raise CLIError(f"unknown augmentation {name!r}; choose from {choices}") from None
        if mag:
            try:
                magnitude = float(mag)
            except ValueError:
                raise CLIError(f"bad magnitude {mag!r}") from None
        else:
            magnitude = rng.uniform(spec.param_low, spec.param_high) if spec.has_param else 0.0
        result = apply_transform(img, spec, magnitude, rng)
    suffix = ".ppm" if img.channels == 3 else ".pgm"
    safe = kind.replace(":", "_")
    out = Path(out) if out else Path(image_path).with_name(f"{Path(image_path).stem}.{safe}{suffix}")
    write_pnm(out, result)
    return out


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqlab", description="Semi-supervised training experiments.")
    p.add_argument("--version", action="version", version=f"seqlab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="train every seed in a config and write summary.csv")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides out= in the config)")
    r.add_argument("--seed-override", type=int, help="run this single seed instead of the seeds list")

    c = sub.add_parser("compare", help="side-by-side summary of two run directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--out", help="also write the table as CSV")

    pl = sub.add_parser("plot", help="render a metrics or reliability CSV as SVG")
    pl.add_argument("csv")
    pl.add_argument("--kind", required=True, choices=[*PLOT_COLUMNS, "reliability"])
    pl.add_argument("--columns", help="comma-separated metric columns to draw instead of the defaults")
    pl.add_argument("--out")

    a = sub.add_parser("augment-preview", help="augment one PNM image")
    a.add_argument("image")
    a.add_argument("--kind", default="strong", help="weak, medium, strong, or Transform[:magnitude]")
    a.add_argument("--seed-override", type=int, default=0)
    a.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.verb == "run":
            path = run(args.config, args.out, args.seed_override)
            print(path)
        elif args.verb == "compare":
            rows = compare(args.dir_a, args.dir_b)
            sys.stdout.write(format_comparison(rows, Path(args.dir_a).name or "A", Path(args.dir_b).name or "B"))
            if args.out:
                with open(args.out, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["metric", "a_mean", "b_mean", "diff"])
                    for row in rows:
                        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
        elif args.verb == "plot":
            cols = tuple(c.strip() for c in args.columns.split(",")) if args.columns else None
            print(plot(args.csv, args.kind, args.out, cols))
        else:
            print(augment_preview(args.image, args.kind, args.seed_override, args.out))
    except (CLIError, DataError, TrainError, ModelError, ImageError, AugmentError) as exc:
        print(f"seqlab: error: {exc}", file=sys.stderr)
        return 2
    return 0
