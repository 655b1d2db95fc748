"""PNG output for decompositions, viewpoint edits and samples."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .decoder import DecoderOutput


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit, rounding half to even."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path: Path, img: np.ndarray, height: int, width: int) -> None:
    """img: [N, C] or [N] flattened row-major pixels."""
    arr = to_uint8(img).reshape(height, width, -1)
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG")


def tile(panels: Sequence[Sequence[np.ndarray]], pad: int = 1) -> np.ndarray:
    """Rows of [h, w, 3] uint8 panels -> one uint8 image (white gutters)."""
    h, w = panels[0][0].shape[:2]
    cols = max(len(r) for r in panels)
    out = np.full((len(panels) * (h + pad) + pad, cols * (w + pad) + pad, 3), 255, np.uint8)
    for i, row in enumerate(panels):
        for j, p in enumerate(row):
            if p.ndim == 2:
                p = p[..., None]
            if p.shape[-1] == 1:
                p = np.repeat(p, 3, axis=-1)
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            out[y:y + h, x:x + w] = p
    return out


def decomposition_panels(x: np.ndarray, out: DecoderOutput, b: int = 0) -> list[dict]:
    """Per-view panel descriptors for scene ``b`` of a batched decoder output.

    Appearance panels per view: input, reconstruction, background with and
    without shadows, and each object slot's appearance: K + 4 in total.
    Mask panels: perceived masks pi_0..pi_K, complete silhouettes and shadows.
    """
    recon = out.recon()[b].cpu().numpy()
    a = out.a[b].cpu().numpy()
    b0 = out.b[b, :, 0].cpu().numpy()
    pi = out.pi[b].cpu().numpy()
    s_obj = out.s_obj[b].cpu().numpy()
    s_sdw = out.s_sdw[b].cpu().numpy()
    M, K = s_obj.shape[:2]
    panels = []
    for m in range(M):
        panels.append({"view": m, "kind": "appearance", "name": "input", "data": x[m]})
        panels.append({"view": m, "kind": "appearance", "name": "recon", "data": recon[m]})
        panels.append({"view": m, "kind": "appearance", "name": "background_shadowed", "data": a[m, 0]})
        panels.append({"view": m, "kind": "appearance", "name": "background", "data": b0[m]})
        for k in range(1, K + 1):
            panels.append({"view": m, "kind": "appearance", "name": f"object_{k}", "data": a[m, k]})
        for k in range(K + 1):
            panels.append({"view": m, "kind": "mask", "name": f"perceived_{k}", "data": pi[m, k]})
        for k in range(K):
            panels.append({"view": m, "kind": "mask", "name": f"silhouette_{k + 1}", "data": s_obj[m, k]})
            panels.append({"view": m, "kind": "mask", "name": f"shadow_{k + 1}", "data": s_sdw[m, k]})
    return panels


def write_panels(directory: Path, panels: list[dict], height: int, width: int) -> list[dict]:
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for p in panels:
        name = f"view{p['view']}_{p['name']}.png"
        save_png(directory / name, p["data"], height, width)
        entries.append({"file": name, "view": p["view"], "kind": p["kind"], "name": p["name"]})
    # one overview grid: a row of appearance panels then a row of masks per view
    rows = []
    for m in sorted({p["view"] for p in panels}):
        for kind in ("appearance", "mask"):
            rows.append([to_uint8(p["data"]).reshape(height, width, -1)
                         for p in panels if p["view"] == m and p["kind"] == kind])
    Image.fromarray(tile(rows)).save(directory / "overview.png", format="PNG")
    return entries


def write_frames(directory: Path, frames: Sequence[np.ndarray], height: int, width: int,
                 prefix: str = "frame") -> list[str]:
    """Save [N, C] frames individually plus a horizontal strip."""
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(frames):
        name = f"{prefix}_{i:03d}.png"
        save_png(directory / name, f, height, width)
        names.append(name)
    strip = tile([[to_uint8(f).reshape(height, width, -1) for f in frames]])
    Image.fromarray(strip).save(directory / f"{prefix}_strip.png", format="PNG")
    return names


def write_manifest(directory: Path, payload: dict) -> None:
    (directory / "manifest.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")
