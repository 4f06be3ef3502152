"""
Long-tailed splits and calibration
==================================

Builds an imbalanced split, trains briefly on it, and looks at per-class
accuracy and the reliability of the predicted confidences.
Usage: python3 04_long_tail_and_calibration.py [iterations]
"""

import sys

import numpy as np

from seqlab.data import LongTailSpec, long_tail_counts, make_long_tail, synth_blobs
from seqlab.metrics import calibration, classify_metrics
from seqlab.model import ModelConfig, predict_proba
from seqlab.train import TrainConfig, train_loop

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 300

# %% Class sizes decay geometrically from the head class to the tail class.
print("lambda=100, N1=1000, L=10:", long_tail_counts(LongTailSpec(100, 1000, 10, 0.2)))

spec = LongTailSpec(lambda_imb=20, N1=200, L=4, beta=0.2)
pool = synth_blobs(4, 200, side=8, noise=0.3, seed=1)
labeled, unlabeled = make_long_tail(pool, spec, seed=1)
print("labeled per class:  ", [len(c) for c in labeled.class_indices()])
print("unlabeled per class:", [len(c) for c in unlabeled.class_indices()])

# %% A short SequenceMatch run on the imbalanced data.
test = synth_blobs(4, 100, side=8, noise=0.3, seed=2)
cfg = TrainConfig.for_algorithm("SequenceMatch", B=4, mu=7, total_iters=iters, eval_every=iters, seed=1)
res = train_loop(cfg, ModelConfig(64, 4, (64,), init_seed=1), labeled, unlabeled, test)

# %% Head classes usually come out more accurate than tail classes.
probs = predict_proba(res.state.ema_params, test.array())
report = classify_metrics(test.labels, probs)
print("per-class accuracy:", np.round(report.class_wise_accuracy, 3))
print("macro F1: %.3f" % report.macro_f1)

# %% Reliability table: mean confidence against accuracy in each occupied bin.
cal = calibration(test.labels, probs, M=10)
for lo, c, a, n in zip(cal.bin_edges, cal.bin_confidence, cal.bin_accuracy, cal.bin_counts):
    if n:
        print(f"  bin from {lo:.1f}: n={n:4d}  conf={c:.3f}  acc={a:.3f}")
print("ECE: %.4f" % cal.ece)
