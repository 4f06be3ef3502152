"""
A desk-scale semi-supervised run
================================

Trains the small MLP on the synthetic blob task (4 classes, 40 labels, 4000
unlabeled images) with and without the unlabeled data, then plots the curves.
Takes about a minute on one core.
Usage: python3 03_desk_benchmark.py [output_dir] [seed]
"""

import sys
from pathlib import Path

from seqlab import cli
from seqlab.experiments import DESK, final_error, run_desk

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output/desk")
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
print("preset:", DESK)

# %% Labeled data only.
sup = run_desk("SupervisedOnly", seed, out / "supervised")
print("SupervisedOnly test error: %.3f" % final_error(sup))

# %% Labeled plus unlabeled data with the three-view objective.
seq = run_desk("SequenceMatch", seed, out / "sequencematch")
print("SequenceMatch test error:  %.3f" % final_error(seq))

# %% How much of the unlabeled batch sat below the threshold over time?
rows = seq.rows
for k in (0, len(rows) // 4, len(rows) // 2, len(rows) - 1):
    r = rows[k]
    print(f"iter {r['iter']:>5}: mask ratio {r['mask_ratio']:.2f}, pseudo-label acc {r['pseudo_acc']}")

# %% SVG figures for the loss curves, ratios and the reliability diagram.
for kind in ("loss", "mask"):
    print(cli.plot(out / "sequencematch" / "metrics.csv", kind))
print(cli.plot(out / "sequencematch" / "reliability.csv", "reliability"))
