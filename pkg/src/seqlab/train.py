"""Training loop: batch assembly, three-view augmentation, losses, SGD with
momentum on a cosine schedule, and an EMA copy of the weights for evaluation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics, problib
from .augment import AugmentPolicy, augment
from .data import Dataset
from .model import ModelConfig, ParamSet, backward, forward, init, predict_proba, save_checkpoint
from .problib import LossBreakdown, softmax
from .rng import RngStream

log = logging.getLogger(__name__)

ALGORITHMS = ("SequenceMatch", "FixMatch", "UDA", "SupervisedOnly", "LowConfOnly")

METRIC_COLUMNS = (
    "iter", "lr", "l_sup", "l_u_ce", "l_kl_wm", "l_kl_ms", "l_kl_ws", "total",
    "mask_ratio", "utilization", "pseudo_acc", "eval_error", "eval_ece",
)


class TrainError(ValueError):
    """Invalid training configuration or batch."""


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "SequenceMatch"
    B: int = 64
    mu: int = 7
    tau: float = 0.95
    T: float = 0.5
    lambda_u: float = 1.0
    lr0: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    decoupled_weight_decay: bool = False
    ema_momentum: float = 0.999
    total_iters: int = 2**20
    eval_every: int = 5000
    seed: int = 0
    # lr0 * cos(lr_cosine_factor * pi * k / K)
    lr_cosine_factor: float = 7.0 / 16.0
    sharpen_mode: str = "exp"
    kl_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cutout_fraction: float = 0.5
    bidirectional_enhance: bool = False
    weak_from_ema: bool = False
    ece_bins: int = 15

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise TrainError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        object.__setattr__(self, "kl_weights", tuple(float(w) for w in self.kl_weights))
        if self.B < 1 or self.mu < 0:
            raise TrainError(f"bad batch sizes B={self.B}, mu={self.mu}")
        if not 0 < self.tau <= 1:
            raise TrainError(f"tau must be in (0, 1], got {self.tau}")
        if not self.T > 0:
            raise TrainError(f"T must be > 0, got {self.T}")
        if not 0 <= self.ema_momentum <= 1:
            raise TrainError(f"ema_momentum must be in [0, 1], got {self.ema_momentum}")
        if self.total_iters < 0 or self.eval_every < 1:
            raise TrainError("total_iters must be >= 0 and eval_every >= 1")

    @classmethod
    def for_algorithm(cls, algorithm: str, preset: str = "default", **overrides) -> "TrainConfig":
        """Hyperparameters from the reference tables.

        ``preset="large"`` is the large-dataset column (tau 0.7, mu 1, B 128,
        weight decay 3e-4). UDA uses tau 0.8 and T 0.4.
        """
        base: dict = {"algorithm": algorithm}
        if algorithm == "UDA":
            base.update(tau=0.8, T=0.4)
        if preset == "large":
            base.update(tau=0.7, mu=1, B=128, weight_decay=3e-4)
        elif preset != "default":
            raise TrainError(f"unknown preset {preset!r}")
        base.update(overrides)
        return cls(**base)

    @property
    def unlabeled_batch(self) -> int:
        return 0 if self.algorithm == "SupervisedOnly" else self.mu * self.B


@dataclass
class TrainState:
    params: ParamSet
    ema_params: ParamSet
    velocity: ParamSet
    iter: int
    rng: RngStream

    @classmethod
    def initial(cls, model_cfg: ModelConfig, cfg: TrainConfig) -> "TrainState":
        params = init(model_cfg)
        return cls(params, params.copy(), params.zeros_like(), 0, RngStream(cfg.seed))


@dataclass(frozen=True)
class StepMetrics:
    l_sup: float
    l_u_ce: float
    l_kl_wm: float
    l_kl_ms: float
    l_kl_ws: float
    total: float
    mask_ratio: float | None  # share of the unlabeled batch below tau
    utilization: float
    pseudo_acc: float | None
    lr: float


# ---------------------------------------------------------------- optimiser


def cosine_lr(k: int, K: int, lr0: float, factor: float = 7.0 / 16.0) -> float:
    """``lr0 * cos(factor * pi * k / K)``; the default factor gives cos(7 pi k / 16K)."""
    if not 0 <= k < K:
        raise TrainError(f"iteration {k} outside [0, {K})")
    return lr0 * math.cos(factor * math.pi * k / K)


def sgd_momentum_step(params, grads, velocity, lr, momentum, weight_decay, decoupled=False):
    """Heavy-ball SGD. Coupled: g = grad + wd * w; v = m v + g; w -= lr v.
    Decoupled: v is built from grad alone and w also shrinks by lr * wd * w."""
    if params.shapes() != grads.shapes() or params.shapes() != velocity.shapes():
        raise RuntimeError("parameter, gradient and velocity shapes differ")
    if decoupled:
        new_v = velocity.map(lambda v, g: momentum * v + g, grads)
        new_p = params.map(lambda w, v: w - lr * v - lr * weight_decay * w, new_v)
    else:
        new_v = velocity.map(lambda v, g, w: momentum * v + (g + weight_decay * w), grads, params)
        new_p = params.map(lambda w, v: w - lr * v, new_v)
    return new_p, new_v


def ema_update(ema_params: ParamSet, params: ParamSet, m: float) -> ParamSet:
    if not 0 <= m <= 1:
        raise TrainError(f"EMA momentum must be in [0, 1], got {m}")
    return ema_params.map(lambda e, w: m * e + (1.0 - m) * w, params)


def _add(a: ParamSet, b: ParamSet) -> ParamSet:
    return a.map(np.add, b)


# ---------------------------------------------------------------- one step


def _policies(cfg: TrainConfig):
    kw = {"cutout_fraction": cfg.cutout_fraction, "bidirectional": cfg.bidirectional_enhance}
    return AugmentPolicy.weak(), AugmentPolicy.medium(**kw), AugmentPolicy.strong(**kw)


def _view(images, policy, rng: RngStream, it: int, tag: str):
    return [augment(img, policy, rng.derive(it, tag, i)) for i, img in enumerate(images)]


def train_step(state: TrainState, labeled, unlabeled, cfg: TrainConfig, unlabeled_labels=None):
    """One iteration. ``labeled`` is ``(images, labels)``, ``unlabeled`` a
    sequence of images. Returns ``(new_state, StepMetrics)``.

    Each augmentation call gets its own stream derived from
    ``(seed, iteration, view tag, position in batch)``.
    """
    lab_images, lab_labels = labeled
    lab_images, unl_images = list(lab_images), list(unlabeled)
    if len(lab_images) != cfg.B or len(lab_labels) != cfg.B:
        raise TrainError(f"labeled batch has {len(lab_images)} items, expected B={cfg.B}")
    if len(unl_images) != cfg.unlabeled_batch:
        raise TrainError(
            f"unlabeled batch has {len(unl_images)} items, expected {cfg.unlabeled_batch}"
        )
    it = state.iter
    lr = cosine_lr(it, cfg.total_iters, cfg.lr0, cfg.lr_cosine_factor)
    weak_p, medium_p, strong_p = _policies(cfg)
    params = state.params

    logits_l, cache_l = forward(params, _view(lab_images, weak_p, state.rng, it, "lw"))
    probs_l = softmax(logits_l)
    alg = cfg.algorithm

    if alg == "SupervisedOnly" or not unl_images:
        l_sup, g_l = problib.supervised_ce(lab_labels, probs_l, grad=True)
        losses = LossBreakdown(l_sup=l_sup, total=l_sup)
        grads = backward(cache_l, g_l)
        ratios = None
    else:
        weak_model = state.ema_params if cfg.weak_from_ema else params
        logits_w, _ = forward(weak_model, _view(unl_images, weak_p, state.rng, it, "uw"))
        pw = softmax(logits_w)
        logits_s, cache_s = forward(params, _view(unl_images, strong_p, state.rng, it, "us"))
        ps = softmax(logits_s)
        g_m = cache_m = None
        if alg == "SequenceMatch":
            logits_m, cache_m = forward(params, _view(unl_images, medium_p, state.rng, it, "um"))
            pm = softmax(logits_m)
            losses, lg = problib.seqmatch_objective(
                lab_labels, probs_l, pw, pm, pm, ps,
                tau=cfg.tau, T=cfg.T, lambda_u=cfg.lambda_u,
                kl_weights=cfg.kl_weights, sharpen_mode=cfg.sharpen_mode,
            )
            g_l, g_m, g_s = lg
        else:
            l_sup, g_l = problib.supervised_ce(lab_labels, probs_l, grad=True)
            if alg == "FixMatch":
                l_u, g_s = problib.fixmatch_unsup_loss(pw, ps, cfg.tau, grad=True)
                losses = LossBreakdown(l_sup=l_sup, l_u_ce=l_u)
            elif alg == "UDA":
                l_u, g_s = problib.uda_unsup_loss(
                    pw, ps, cfg.tau, cfg.T, sharpen_mode=cfg.sharpen_mode, grad=True
                )
                losses = LossBreakdown(l_sup=l_sup, l_u_ce=l_u)
            else:  # LowConfOnly
                l_u, g_s = problib.seqmatch_kl_pair(
                    pw, ps, pw, cfg.tau, cfg.T, invert_gate=True,
                    sharpen_mode=cfg.sharpen_mode, grad=True,
                )
                losses = LossBreakdown(l_sup=l_sup, l_kl_ws=l_u)
            losses = replace(losses, total=l_sup + cfg.lambda_u * l_u)
            g_s = cfg.lambda_u * g_s
        grads = backward(cache_l, g_l)
        # zero unsupervised weight must leave the update bit-identical to supervised-only
        if cfg.lambda_u != 0:
            grads = _add(grads, backward(cache_s, g_s))
            if cache_m is not None:
                grads = _add(grads, backward(cache_m, g_m))
        ratios = metrics.ssl_ratios(pw, cfg.tau, unlabeled_labels, alg)

    new_params, new_velocity = sgd_momentum_step(
        params, grads, state.velocity, lr, cfg.momentum, cfg.weight_decay,
        cfg.decoupled_weight_decay,
    )
    new_ema = ema_update(state.ema_params, new_params, cfg.ema_momentum)
    step = StepMetrics(
        **losses.as_dict(),
        mask_ratio=ratios.mask_ratio if ratios else None,
        utilization=ratios.utilization if ratios else 0.0,
        pseudo_acc=ratios.pseudo_label_accuracy if ratios else None,
        lr=lr,
    )
    return TrainState(new_params, new_ema, new_velocity, it + 1, state.rng), step


# ---------------------------------------------------------------- loop


class CyclingSampler:
    """Endless shuffled batches over ``range(n)``; a batch never straddles two
    epochs (the tail of an epoch that cannot fill a batch is dropped)."""

    def __init__(self, n: int, batch: int, rng: RngStream):
        if batch > n:
            raise TrainError(f"batch of {batch} from a pool of {n}")
        self.n, self.batch, self.rng = n, batch, rng
        self.epoch, self.pos = 0, 0
        self.order = rng.derive("epoch", 0).permutation(n) if batch else []

    def next(self) -> list[int]:
        if self.batch == 0:
            return []
        if self.pos + self.batch > self.n:
            self.epoch += 1
            self.order = self.rng.derive("epoch", self.epoch).permutation(self.n)
            self.pos = 0
        out = self.order[self.pos : self.pos + self.batch]
        self.pos += self.batch
        return out


@dataclass
class TrainResult:
    state: TrainState
    rows: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    calibration: metrics.CalibrationReport | None = None


def evaluate(params: ParamSet, ds: Dataset, bins: int = 15):
    probs = predict_proba(params, ds.array())
    report = metrics.classify_metrics(ds.labels, probs)
    return report, metrics.calibration(ds.labels, probs, bins)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise TrainError(f"{path}: unexpected metrics columns {reader.fieldnames}")
        return [{k: (float(v) if v != "" else None) for k, v in r.items()} for r in reader]


def train_loop(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    labeled: Dataset,
    unlabeled: Dataset,
    test: Dataset | None = None,
    out_dir=None,
    tag: str = "",
) -> TrainResult:
    """Run ``cfg.total_iters`` steps and evaluate the EMA weights on ``test``
    every ``eval_every`` steps and after the last one.

    With ``out_dir`` set, writes ``metrics{tag}.csv``, ``reliability{tag}.csv``
    and ``ckpt{tag}_<iter>.bin`` (EMA weights) at each evaluation.
    """
    state = TrainState.initial(model_cfg, cfg)
    result = TrainResult(state)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    K = cfg.total_iters
    if K > 0:
        lab_sampler = CyclingSampler(len(labeled), cfg.B, state.rng.derive("labeled"))
        unl_sampler = CyclingSampler(len(unlabeled), cfg.unlabeled_batch, state.rng.derive("unlabeled"))
    for k in range(K):
        li = lab_sampler.next()
        ui = unl_sampler.next()
        state, step = train_step(
            state,
            ([labeled.images[i] for i in li], [labeled.labels[i] for i in li]),
            [unlabeled.images[i] for i in ui],
            cfg,
            [unlabeled.labels[i] for i in ui] if ui else None,
        )
        row = {"iter": state.iter, **asdict(step)}
        if test is not None and len(test) and (state.iter % cfg.eval_every == 0 or state.iter == K):
            report, calib = evaluate(state.ema_params, test, cfg.ece_bins)
            row["eval_error"] = report.error_rate
            row["eval_ece"] = calib.ece
            result.calibration = calib
            if out is not None:
                path = out / f"ckpt{tag}_{state.iter}.bin"
                save_checkpoint(path, model_cfg, state.ema_params)
                result.checkpoints.append(path)
            log.info("iter %d: eval error %.4f, ece %.4f", state.iter, report.error_rate, calib.ece)
        result.rows.append(row)
    result.state = state
    if out is not None:
        write_metrics_csv(out / f"metrics{tag}.csv", result.rows)
        if result.calibration is not None:
            (out / f"reliability{tag}.csv").write_text(result.calibration.to_csv())
    return result
