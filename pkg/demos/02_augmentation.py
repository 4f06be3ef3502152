"""
Weak, medium and strong augmentation
====================================

Applies the three policies to one synthetic image and writes the results as
PGM files, along with one example of every table transform.
Usage: python3 02_augmentation.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from seqlab.augment import SPECS, TRANSFORM_TABLE, AugmentPolicy, apply_transform, augment
from seqlab.data import synth_blobs
from seqlab.image import Image, write_pnm
from seqlab.rng import RngStream

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output/augment")
out.mkdir(parents=True, exist_ok=True)

# Upscale a noise-free 8x8 blob so the effects are easy to see.
small = synth_blobs(1, 1, side=8, noise=0.0).images[0]
img = Image(np.kron(small.pixels, np.ones((4, 4, 1), dtype=np.uint8)))
write_pnm(out / "original.pgm", img)

# %% Every call gets its own counter-based random stream, so the same key
# always produces the same view.
rng = RngStream(42)
for name, policy in (("weak", AugmentPolicy.weak()), ("medium", AugmentPolicy.medium()), ("strong", AugmentPolicy.strong())):
    for i in range(3):
        view = augment(img, policy, rng.derive(name, i))
        changed = np.mean(view.pixels != img.pixels)
        write_pnm(out / f"{name}_{i}.pgm", view)
        print(f"{name:>6} view {i}: {changed:6.1%} of pixels changed")

# %% One transform at a time, at the midpoint of its magnitude range.
for spec in TRANSFORM_TABLE:
    m = (spec.param_low + spec.param_high) / 2
    write_pnm(out / f"t_{spec.kind.value}.pgm", apply_transform(img, spec, m))
print(f"wrote {len(TRANSFORM_TABLE)} single-transform examples to {out}")

# %% The identities used by the fixture tests: Brightness 1 and Rotate 0 are no-ops.
kind = {s.kind.value: s for s in SPECS.values()}
assert apply_transform(img, kind["Brightness"], 1.0) == img
assert apply_transform(img, kind["Rotate"], 0.0) == img
