"""
Synthetic vein images
=====================

Each class is a leaf whose secondary veins leave the midrib at a class-specific
angle. Everything else (blade shape, pose, shading) is shared, which makes
neighbouring classes hard to tell apart. The vein mask comes for free.
"""

import sys
from pathlib import Path

import numpy as np

from mgattn import pnm
from mgattn.attention import resize_mask
from mgattn.synth import SynthSpec, augment, render

out = Path(sys.argv[1] if len(sys.argv) > 1 else "leaf_demo")
out.mkdir(exist_ok=True)

spec = SynthSpec(num_classes=5, samples_per_class=3, image_size=64)
for k in range(spec.num_classes):
    s = render(spec, k, 0)
    print(f"class {k}: branch angle {spec.angle(k):.0f} deg, vein pixels {100 * s.mask.mean():.1f}%")
    pnm.write_ppm(out / f"class{k}.ppm", pnm.to_uint8(s.image.transpose(1, 2, 0)))
    pnm.write_pgm(out / f"class{k}.mask.pgm", 255 * s.mask)

# how different are neighbours? mean absolute pixel difference on a 0..1 scale
a, b = render(spec, 0, 0), render(spec, 1, 0)
print("class 0 vs 1 mean |diff|:", round(float(np.abs(a.image - b.image).mean()), 4))

# the mask seen by the attention loss: pooled to the 8x8 feature grid, peak 1
target = resize_mask(a.mask, 8, 8)
print("8x8 mask target:\n", np.round(target, 2))

# augmentation moves image and mask together
aug = augment(a, np.random.default_rng(3))
pnm.write_ppm(out / "augmented.ppm", pnm.to_uint8(aug.image.transpose(1, 2, 0)))
pnm.write_pgm(out / "augmented.mask.pgm", 255 * aug.mask)
print("wrote images to", out)
