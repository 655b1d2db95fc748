"""Synthetic multi-view scenes and their ground truth.

Each scene is a small 2D world of sprites seen from several cameras.  A camera
shifts the world cyclically (with parallax for nearer sprites), zooms it and
nudges it vertically, so the same objects appear at different places, sizes
and occlusion patterns in each view.  This script renders a few scenes, writes
a contact sheet and prints what ground truth comes with them.

    python demos/01_synthetic_scenes.py [OUT_DIR]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from ocloc.data import GeneratorSpec, generate_dataset
from ocloc.render import tile, to_uint8

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out_dir.mkdir(parents=True, exist_ok=True)

spec = GeneratorSpec(object_count_range=(2, 4), M_range=(4, 4))
scenes = generate_dataset(spec, 4, seed=0)
H, W = spec.image_height, spec.image_width

rows = []
for s in scenes:
    views = [to_uint8(v).reshape(H, W, 3) for v in s.images]
    # ground-truth partition of each view, one grey level per object
    labels = s.gt_partition.argmax(-1)
    masks = [to_uint8(l / max(s.K_hat, 1)).reshape(H, W) for l in labels]
    rows.append(views + masks)
sheet = Image.fromarray(tile(rows)).resize((len(rows[0]) * (W + 1) * 4, len(rows) * (H + 1) * 4),
                                          Image.NEAREST)
sheet.save(out_dir / "scenes.png")

s = scenes[0]
print(f"scene 0: {s.K_hat} objects, {s.M} views")
print("  partition", s.gt_partition.shape, "(view, pixel, background + objects)")
print("  amodal shapes", s.gt_shapes.shape, "(full silhouettes, occluded parts included)")
print("  occlusion order of view 0:\n", s.gt_order[0])
visible = s.gt_partition[..., 1:].sum(1)
print("  visible pixels per object and view:\n", visible)
print("  camera parameters (shift, zoom, vertical shift):\n", np.round(s.viewpoint_params, 3))
print(f"wrote {out_dir / 'scenes.png'}")
