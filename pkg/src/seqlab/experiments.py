"""The desk-scale synthetic benchmark shared by the tests, demos and CLI."""

from __future__ import annotations

from dataclasses import dataclass

from .data import Dataset, SplitSpec, make_split, synth_blobs
from .model import ModelConfig
from .train import TrainConfig, TrainResult, train_loop

DESK = {
    "classes": 4,
    "side": 8,
    "noise": 0.3,
    "labels": 40,
    "unlabeled": 4000,
    "test_per_class": 250,
    "hidden": (64,),
    "B": 8,
    "mu": 7,
    "iters": 2000,
}


@dataclass(frozen=True)
class DeskSplits:
    labeled: Dataset
    unlabeled: Dataset
    test: Dataset


def desk_splits(seed: int, noise: float = DESK["noise"]) -> DeskSplits:
    """40 labeled and 4000 disjoint unlabeled 8x8 blob images, plus a test set
    drawn from an independent stream."""
    L = DESK["classes"]
    per_class = (DESK["labels"] + DESK["unlabeled"]) // L
    pool = synth_blobs(L, per_class, DESK["side"], noise, seed=seed)
    labeled, unlabeled = make_split(
        pool, SplitSpec(DESK["labels"], balanced=True, seed=seed, include_labeled_in_unlabeled=False)
    )
    test = synth_blobs(L, DESK["test_per_class"], DESK["side"], noise, seed=seed + 1_000_003)
    return DeskSplits(labeled, unlabeled, test)


def desk_model(seed: int) -> ModelConfig:
    side = DESK["side"]
    return ModelConfig(side * side, DESK["classes"], DESK["hidden"], init_seed=seed)


def desk_config(algorithm: str, seed: int, **overrides) -> TrainConfig:
    kw = {
        "B": DESK["B"],
        "mu": DESK["mu"],
        "total_iters": DESK["iters"],
        "eval_every": DESK["iters"],
        "seed": seed,
    }
    kw.update(overrides)
    return TrainConfig.for_algorithm(algorithm, **kw)


def run_desk(algorithm: str, seed: int, out_dir=None, **overrides) -> TrainResult:
    splits = desk_splits(seed)
    return train_loop(
        desk_config(algorithm, seed, **overrides),
        desk_model(seed),
        splits.labeled,
        splits.unlabeled,
        splits.test,
        out_dir=out_dir,
    )


def final_error(result: TrainResult) -> float:
    evals = [r["eval_error"] for r in result.rows if r.get("eval_error") is not None]
    if not evals:
        raise ValueError("run has no evaluations")
    return evals[-1]
