"""Inspect the stored desk-scale model: scores, decompositions, new viewpoints.

Uses artifacts/desk_run/checkpoint.pt and regenerates its held-out scenes
from the recorded generator settings.

    python demos/04_trained_model.py [OUT_DIR]
"""

import json
import sys
from pathlib import Path

import numpy as np
import torch

from ocloc.data import GeneratorSpec, generate_dataset
from ocloc.metrics import evaluate_scenes, format_report
from ocloc.render import decomposition_panels, write_frames, write_panels
from ocloc.trainer import load_model
from ocloc.viewpoints import interpolate_viewpoints, sample_viewpoints

root = Path(__file__).resolve().parents[1] / "artifacts" / "desk_run"
out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
meta = json.loads((root / "run.json").read_text())
spec = GeneratorSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["spec"].items()})
heldout = generate_dataset(spec, meta["heldout_scenes"], meta["heldout_seed"])
model = load_model(root / "checkpoint.pt")
H, W = model.cfg.image_height, model.cfg.image_width

print(format_report(evaluate_scenes(model, heldout, seeds=(0,))))
counts = [s.K_hat for s in heldout]
print("object counts in the held-out set:", np.bincount(counts)[2:], "(2, 3, 4 objects)")

scene = next(s for s in heldout if s.M >= 3)
params, latent, out = model.decompose(torch.from_numpy(scene.images)[None], torch.Generator().manual_seed(0))
print("presence probabilities per slot:", params.kappa[0].numpy().round(2))
write_panels(out_dir / "decomposition", decomposition_panels(scene.images, out), H, W)

# infer the scene once, then re-render it from in-between and random cameras
gen = torch.Generator().manual_seed(0)
_, frames = interpolate_viewpoints(model, torch.from_numpy(scene.images), 8, gen)
write_frames(out_dir / "viewpoints", [f.recon()[0, 0].numpy() for f in frames], H, W, "interp")
_, samples = sample_viewpoints(model, torch.from_numpy(scene.images), 6, gen)
write_frames(out_dir / "viewpoints", [np.clip(f.recon()[0, 0].numpy(), 0, 1) for f in samples], H, W, "sample")
print(f"wrote panels and viewpoint strips under {out_dir}")
