"""Synthetic multi-view sprite scenes with full ground truth.

Each scene is one 2D "world" of flat sprites seen from M cameras.  A camera
is a cyclic horizontal shift (with depth parallax, so nearer sprites move
further), an isotropic zoom about the image centre and a small vertical
shift.  Sprites are painted back to front by a global depth, and each sprite
drops a darkened, offset copy of its silhouette on the background.  Shadow
pixels belong to the background in the ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

SHAPES = ("circle", "square", "triangle", "diamond")

OBJECT_COLORS = (
    (0.90, 0.15, 0.15), (0.15, 0.70, 0.20), (0.15, 0.35, 0.95), (0.95, 0.85, 0.10),
    (0.85, 0.20, 0.85), (0.10, 0.80, 0.85), (0.95, 0.55, 0.10), (0.55, 0.25, 0.85),
)

BACKGROUND_COLORS = (
    (0.55, 0.55, 0.55), (0.62, 0.58, 0.50), (0.50, 0.56, 0.62), (0.58, 0.62, 0.56),
)


class DatasetError(ValueError):
    """A dataset directory is inconsistent with its manifest."""


@dataclass(frozen=True)
class GeneratorSpec:
    object_count_range: tuple[int, int] = (2, 4)
    M_range: tuple[int, int] = (4, 4)
    image_height: int = 32
    image_width: int = 32
    shapes: tuple[str, ...] = SHAPES
    object_colors: tuple[tuple[float, float, float], ...] = OBJECT_COLORS
    background_colors: tuple[tuple[float, float, float], ...] = BACKGROUND_COLORS
    # sprite radius as a fraction of the image height
    size_range: tuple[float, float] = (0.11, 0.17)
    # camera: cyclic shift (fraction of width), zoom, vertical shift (fraction of height)
    shift_range: tuple[float, float] = (-0.2, 0.2)
    parallax: float = 0.5
    scale_range: tuple[float, float] = (0.85, 1.0)
    vshift_range: tuple[float, float] = (-0.05, 0.05)
    # shadows: offset in world units (fraction of image size) along the light direction
    shadows: bool = True
    shadow_offset: tuple[float, float] = (0.05, 0.06)
    shadow_darkness: float = 0.45
    # minimal centre distance as a fraction of the summed radii
    min_separation: float = 0.7

    def __post_init__(self):
        for name in ("object_count_range", "M_range", "size_range", "shift_range",
                     "scale_range", "vshift_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} must be non-empty, got {(lo, hi)}")
        if self.object_count_range[0] < 0:
            raise ValueError("object_count_range must be >= 0")
        if self.M_range[0] < 1:
            raise ValueError("M_range lower bound must be >= 1")
        if self.object_count_range[1] > len(self.object_colors):
            raise ValueError("not enough object colors for the maximal object count")
        if not 0 < self.shadow_darkness <= 1:
            raise ValueError("shadow_darkness must be in (0, 1]")
        if self.scale_range[0] <= 0:
            raise ValueError("scale_range must be positive")
        unknown = set(self.shapes) - set(SHAPES)
        if not self.shapes or unknown:
            raise ValueError(f"shapes must be a non-empty subset of {SHAPES}")

    @property
    def N(self) -> int:
        return self.image_height * self.image_width


@dataclass
class Scene:
    """One scene: M images plus per-view ground truth.

    Pixel axes are flattened row-major, so ``images`` is [M, N, C].  Slot 0 of
    ``gt_partition`` is the background; object k lives in slot k of the
    partition and in index k-1 of ``gt_shapes`` / ``gt_order``.
    """

    images: np.ndarray           # [M, N, C] float32 in [0, 1]
    gt_partition: np.ndarray     # [M, N, K_hat + 1] uint8, one-hot per pixel
    gt_shapes: np.ndarray        # [M, N, K_hat] float32 amodal silhouettes
    gt_order: np.ndarray         # [M, K_hat, K_hat] uint8, [m, i, j] = 1 if i occludes j
    K_hat: int
    viewpoint_params: np.ndarray  # [M, 3] float32: shift, scale, vertical shift
    seed: int = 0
    image_shape: tuple[int, int] = (32, 32)

    @property
    def M(self) -> int:
        return self.images.shape[0]

    def select_views(self, index: Sequence[int]) -> "Scene":
        """Keep (and reorder) the listed views; every M-indexed field follows."""
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            images=self.images[index],
            gt_partition=self.gt_partition[index],
            gt_shapes=self.gt_shapes[index],
            gt_order=self.gt_order[index],
            viewpoint_params=self.viewpoint_params[index],
        )

    def equals(self, other: "Scene") -> bool:
        return (self.K_hat == other.K_hat and self.seed == other.seed
                and self.image_shape == other.image_shape
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("images", "gt_partition", "gt_shapes", "gt_order",
                                  "viewpoint_params")))


def _silhouette(shape: str, dx: np.ndarray, dy: np.ndarray, r: np.ndarray) -> np.ndarray:
    if shape == "circle":
        return dx ** 2 + dy ** 2 <= r ** 2
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.85 * r
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.2 * r
    # upright triangle, apex at -r, base at +0.8 r
    return (dy >= -r) & (dy <= 0.8 * r) & (np.abs(dx) <= 0.6 * (dy + r))


def _wrap(d: np.ndarray) -> np.ndarray:
    return (d + 0.5) % 1.0 - 0.5


def generate_scene(spec: GeneratorSpec, seed: int) -> Scene:
    """Render one scene; a pure function of ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    H, W = spec.image_height, spec.image_width
    K_hat = int(rng.integers(spec.object_count_range[0], spec.object_count_range[1] + 1))
    M = int(rng.integers(spec.M_range[0], spec.M_range[1] + 1))

    # world layout (normalised image units, x is cyclic)
    radius = rng.uniform(*spec.size_range, size=K_hat)
    xs, ys = np.zeros(K_hat), np.zeros(K_hat)
    for k in range(K_hat):
        for _ in range(200):
            x, y = rng.uniform(0.0, 1.0), rng.uniform(0.25, 0.75)
            dist = np.hypot(_wrap(x - xs[:k]), y - ys[:k])
            if np.all(dist >= spec.min_separation * (radius[k] + radius[:k])):
                break
        xs[k], ys[k] = x, y
    shapes = [spec.shapes[i] for i in rng.integers(0, len(spec.shapes), size=K_hat)]
    colors = np.asarray(spec.object_colors, dtype=np.float64)[
        rng.permutation(len(spec.object_colors))[:K_hat]]
    depth = rng.permutation(K_hat)  # larger = nearer the camera
    bg_color = np.asarray(spec.background_colors[rng.integers(len(spec.background_colors))])

    shift = rng.uniform(*spec.shift_range, size=M)
    scale = rng.uniform(*spec.scale_range, size=M)
    vshift = rng.uniform(*spec.vshift_range, size=M)

    # pixel centres, in units of the image height (x divided by W then rescaled)
    v, u = np.meshgrid((np.arange(H) + 0.5) / H, (np.arange(W) + 0.5) / W, indexing="ij")
    u, v = u.reshape(1, -1), v.reshape(1, -1)
    aspect = W / H

    nearness = depth / max(K_hat - 1, 1)
    shapes_amodal = np.zeros((M, K_hat, H * W), dtype=bool)
    shadows = np.zeros((M, K_hat, H * W), dtype=bool)
    for k in range(K_hat):
        cx = (xs[k] - 0.5) * scale + 0.5 + shift * (1.0 + spec.parallax * nearness[k])
        cy = (ys[k] - 0.5) * scale + 0.5 + vshift
        r = (radius[k] * scale)[:, None]
        dx = _wrap(u - cx[:, None]) * aspect
        dy = v - cy[:, None]
        shapes_amodal[:, k] = _silhouette(shapes[k], dx, dy, r)
        if spec.shadows:
            sdx = _wrap(u - cx[:, None] - spec.shadow_offset[0] * scale[:, None]) * aspect
            sdy = v - cy[:, None] - spec.shadow_offset[1] * scale[:, None]
            shadows[:, k] = _silhouette(shapes[k], sdx, sdy, r)

    # visible object per pixel: nearest covering sprite
    owner = np.zeros((M, H * W), dtype=np.int64)  # 0 = background
    owner_depth = np.full((M, H * W), -1)
    for k in range(K_hat):
        take = shapes_amodal[:, k] & (depth[k] > owner_depth)
        owner[take] = k + 1
        owner_depth[take] = depth[k]

    shading = 0.85 + 0.3 * v.reshape(-1, 1)  # [N, 1]
    background = np.broadcast_to(bg_color * shading, (M, H * W, 3)).copy()
    in_shadow = shadows.any(axis=1)
    background[in_shadow] *= 1.0 - spec.shadow_darkness
    palette = np.concatenate([np.zeros((1, 3)), colors], axis=0)
    images = np.where((owner > 0)[..., None], palette[owner], background)

    partition = np.zeros((M, H * W, K_hat + 1), dtype=np.uint8)
    np.put_along_axis(partition, owner[..., None], 1, axis=-1)
    order = (depth[:, None] > depth[None, :]).astype(np.uint8)
    return Scene(
        images=np.clip(images, 0.0, 1.0).astype(np.float32),
        gt_partition=partition,
        gt_shapes=shapes_amodal.transpose(0, 2, 1).astype(np.float32),
        gt_order=np.broadcast_to(order, (M, K_hat, K_hat)).copy(),
        K_hat=K_hat,
        viewpoint_params=np.stack([shift, scale, vshift], axis=1).astype(np.float32),
        seed=int(seed),
        image_shape=(H, W),
    )


def generate_dataset(spec: GeneratorSpec, n_scenes: int, seed: int) -> list[Scene]:
    """Scenes ``seed, seed+1, ...``; each is reproducible on its own."""
    return [generate_scene(spec, seed + i) for i in range(n_scenes)]


# --- on-disk format ---------------------------------------------------------

MANIFEST = "manifest.json"
FORMAT_NAME = "ocloc-scenes"
FORMAT_VERSION = 1

_ARRAYS = {
    # file name: (attribute, dtype)
    "images.f32": ("images", "<f4"),
    "gt_partition.u8": ("gt_partition", "u1"),
    "gt_shapes.f32": ("gt_shapes", "<f4"),
    "gt_order.u8": ("gt_order", "u1"),
    "viewpoints.f32": ("viewpoint_params", "<f4"),
}


def _shapes_for(M: int, K_hat: int, H: int, W: int, C: int) -> dict[str, tuple[int, ...]]:
    N = H * W
    return {
        "images.f32": (M, N, C),
        "gt_partition.u8": (M, N, K_hat + 1),
        "gt_shapes.f32": (M, N, K_hat),
        "gt_order.u8": (M, K_hat, K_hat),
        "viewpoints.f32": (M, 3),
    }


def write_dataset(scenes: Sequence[Scene], directory: str | Path) -> dict:
    """Write scenes as raw little-endian arrays plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if scenes:
        H, W = scenes[0].image_shape
        C = scenes[0].images.shape[-1]
    else:
        H = W = C = 0
    entries = []
    for i, scene in enumerate(scenes):
        if scene.image_shape != (H, W) or scene.images.shape[-1] != C:
            raise DatasetError("all scenes in a dataset must share the image geometry")
        sub = directory / f"scene_{i}"
        sub.mkdir(exist_ok=True)
        for name, (attr, dtype) in _ARRAYS.items():
            np.ascontiguousarray(getattr(scene, attr), dtype=dtype).tofile(sub / name)
        meta = {"M": scene.M, "K_hat": scene.K_hat, "seed": scene.seed}
        (sub / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
        entries.append({"dir": sub.name, **meta})
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "image_height": H,
        "image_width": W,
        "C": C,
        "scenes": entries,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_NAME:
        raise DatasetError(f"{path} is not an {FORMAT_NAME} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset version {manifest.get('version')}")
    return manifest


def read_scene(directory: str | Path, entry: dict, manifest: dict) -> Scene:
    sub = Path(directory) / entry["dir"]
    H, W, C = manifest["image_height"], manifest["image_width"], manifest["C"]
    M, K_hat = int(entry["M"]), int(entry["K_hat"])
    arrays = {}
    for name, shape in _shapes_for(M, K_hat, H, W, C).items():
        attr, dtype = _ARRAYS[name]
        data = np.fromfile(sub / name, dtype=dtype)
        if data.size != int(np.prod(shape)):
            raise DatasetError(
                f"{sub / name}: shape mismatch, manifest implies {shape} "
                f"({int(np.prod(shape))} values) but file holds {data.size}")
        arrays[attr] = data.reshape(shape).astype(np.float32 if dtype == "<f4" else np.uint8)
    return Scene(K_hat=K_hat, seed=int(entry["seed"]), image_shape=(H, W), **arrays)


def read_dataset(directory: str | Path) -> list[Scene]:
    manifest = read_manifest(directory)
    return [read_scene(directory, entry, manifest) for entry in manifest["scenes"]]
