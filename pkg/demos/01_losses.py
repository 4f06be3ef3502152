"""
Pseudo-labels, sharpening and the three-view loss
=================================================

A walk through the unsupervised loss terms on a hand-made batch of four
unlabeled samples and three classes.
"""

import numpy as np

from seqlab import problib

np.set_printoptions(precision=4, suppress=True)

# Predictions of the model on the weakly, moderately and strongly augmented
# views of the same four images. Sample 0 is confident, the rest are not.
weak = np.array([
    [0.97, 0.02, 0.01],
    [0.60, 0.30, 0.10],
    [0.34, 0.33, 0.33],
    [0.10, 0.75, 0.15],
])
medium = np.array([
    [0.90, 0.05, 0.05],
    [0.55, 0.35, 0.10],
    [0.30, 0.40, 0.30],
    [0.96, 0.02, 0.02],
])
strong = np.array([
    [0.70, 0.20, 0.10],
    [0.40, 0.40, 0.20],
    [0.30, 0.30, 0.40],
    [0.20, 0.60, 0.20],
])

# %% Which samples clear the threshold?
tau, T = 0.95, 0.5
print("weak confident:  ", problib.confidence_mask(weak, tau))
print("medium confident:", problib.confidence_mask(medium, tau))

# %% Sharpening is a temperature softmax applied to the probabilities.
# It keeps the argmax and leaves the uniform distribution alone.
print("sharpen(weak[1]) =", problib.sharpen(weak[1], T))
print("sharpen(uniform) =", problib.sharpen(np.full(3, 1 / 3), T))

# %% FixMatch trains only on the confident sample; the others are masked out.
print("FixMatch loss:        %.4f" % problib.fixmatch_unsup_loss(weak, strong, tau))

# %% SequenceMatch keeps every sample: a hard target when confident and a
# sharpened soft target otherwise, plus three gated KL consistency terms.
b = problib.seqmatch_total_loss([0], [[0.8, 0.1, 0.1]], weak, medium, strong, tau=tau, T=T)
for name, value in b.as_dict().items():
    print(f"{name:>8}: {value:.4f}")

# %% Switching the KL terms off and making every sample confident recovers
# FixMatch exactly.
confident = 0.97 * np.eye(3)[[0, 1, 2, 1]] + 0.01
b = problib.seqmatch_total_loss([0], [[0.8, 0.1, 0.1]], confident, medium, strong, kl_weights=(0, 0, 0))
print("reduction gap: %.1e" % abs(b.l_u_ce - problib.fixmatch_unsup_loss(confident, strong, tau)))
