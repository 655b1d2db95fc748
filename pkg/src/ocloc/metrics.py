"""Multi-view segmentation metrics: ARI/AMI (all pixels and object pixels),
amodal IoU/F1 under optimal slot matching, counting and ordering accuracy.

Partitions are one-hot arrays ``[M, N, slots]`` with slot 0 the background.
Every metric is computed jointly over all M views of a scene, so a slot must
keep the same object in every view to score well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from .data import Scene

METRIC_NAMES = ("ARI-A", "AMI-A", "ARI-O", "AMI-O", "IoU", "F1", "OCA", "OOA")
CountMode = Literal["ocloc", "heuristic-count", "oracle"]


@dataclass
class SegmentationResult:
    partition: np.ndarray   # [M, N, K+1] uint8 one-hot
    shapes: np.ndarray      # [M, N, K] amodal silhouettes in [0, 1]
    order: np.ndarray       # [M, K, K] uint8, [m, i, j] = 1 if slot i occludes slot j
    count: int
    presence: np.ndarray    # [K] uint8


def _np(t) -> np.ndarray:
    return t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)


def one_hot(labels: np.ndarray, depth: int) -> np.ndarray:
    out = np.zeros(labels.shape + (depth,), dtype=np.uint8)
    np.put_along_axis(out, labels[..., None], 1, axis=-1)
    return out


def order_from_depth(o: np.ndarray) -> np.ndarray:
    """[M, K] depth scores -> [M, K, K] pairwise 'in front of' (ties: lower index)."""
    K = o.shape[-1]
    oi, oj = o[..., :, None], o[..., None, :]
    lower = np.arange(K)[:, None] < np.arange(K)[None, :]
    return ((oi > oj) | ((oi == oj) & lower)).astype(np.uint8)


def count_objects_heuristic(partition: np.ndarray) -> int:
    """Number of slots used anywhere in any view, minus one for the background."""
    used = partition.reshape(-1, partition.shape[-1]).max(axis=0)
    return int(used.sum()) - 1


def discretize(pi, s_obj, o, kappa, mode: CountMode = "ocloc") -> SegmentationResult:
    """Turn one scene's decoder output into hard predictions.

    pi [M, K+1, N], s_obj [M, K, N], o [M, K], kappa [K].
    """
    pi, s_obj, o, kappa = _np(pi), _np(s_obj), _np(o), _np(kappa)
    labels = pi.argmax(axis=1)                      # ties -> lowest slot
    partition = one_hot(labels, pi.shape[1])
    presence = (kappa > 0.5).astype(np.uint8)
    if mode == "heuristic-count":
        count = count_objects_heuristic(partition)
    else:
        count = int(presence.sum())
    return SegmentationResult(
        partition=partition,
        shapes=s_obj.transpose(0, 2, 1).astype(np.float64),
        order=order_from_depth(o),
        count=count,
        presence=presence,
    )


def from_ground_truth(scene: Scene, K: int | None = None) -> SegmentationResult:
    """A perfect prediction, padded with empty slots up to K."""
    K = scene.K_hat if K is None else K
    M, N, _ = scene.gt_partition.shape
    pad = K - scene.K_hat
    partition = np.concatenate([scene.gt_partition, np.zeros((M, N, pad), np.uint8)], axis=-1)
    shapes = np.concatenate([scene.gt_shapes, np.zeros((M, N, pad), np.float32)], axis=-1)
    order = np.zeros((M, K, K), np.uint8)
    order[:, :scene.K_hat, :scene.K_hat] = scene.gt_order
    presence = np.array([1] * scene.K_hat + [0] * pad, np.uint8)
    return SegmentationResult(partition, shapes, order, scene.K_hat, presence)


# --- ARI / AMI --------------------------------------------------------------

def contingency(gt: np.ndarray, pred: np.ndarray, pixels: np.ndarray | None = None) -> np.ndarray:
    """a[k_hat, k] = number of selected pixels in gt slot k_hat and pred slot k."""
    gt = gt.reshape(-1, gt.shape[-1]).astype(np.int64)
    pred = pred.reshape(-1, pred.shape[-1]).astype(np.int64)
    if pixels is not None:
        sel = np.asarray(pixels, dtype=bool).reshape(-1)
        gt, pred = gt[sel], pred[sel]
    return gt.T @ pred


def _same_partition(table: np.ndarray) -> bool:
    """Both labelings induce the same clusters (up to relabelling)."""
    nz = table > 0
    return bool(np.all(nz.sum(axis=0) <= 1) and np.all(nz.sum(axis=1) <= 1))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(gt: np.ndarray, pred: np.ndarray, pixels: np.ndarray | None = None) -> float:
    """Adjusted Rand index between two one-hot partitions over the pixel set."""
    a = contingency(gt, pred, pixels)
    b_all = _comb2(a).sum()
    b_row = _comb2(a.sum(axis=1)).sum()
    b_col = _comb2(a.sum(axis=0)).sum()
    c = _comb2(a.sum())
    if c == 0:
        return 1.0 if _same_partition(a) else 0.0
    expected = b_row * b_col / c
    denom = (b_row + b_col) / 2.0 - expected
    if denom == 0:
        return 1.0 if _same_partition(a) else 0.0
    return float((b_all - expected) / denom)


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def expected_mutual_info(row: np.ndarray, col: np.ndarray) -> float:
    """E[MI] under the permutation (hypergeometric) model with fixed margins."""
    row = row[row > 0].astype(np.int64)
    col = col[col > 0].astype(np.int64)
    n = int(row.sum())
    total = 0.0
    lg_n = gammaln(n + 1)
    for ai in row:
        bj = col
        lo = np.maximum(1, ai + bj - n)
        hi = np.minimum(ai, bj)
        for b, l, h in zip(bj, lo, hi):
            if h < l:
                continue
            nij = np.arange(l, h + 1, dtype=np.float64)
            term = nij / n * (np.log(n * nij) - np.log(float(ai) * float(b)))
            log_p = (gammaln(ai + 1) + gammaln(b + 1) + gammaln(n - ai + 1) + gammaln(n - b + 1)
                     - lg_n - gammaln(nij + 1) - gammaln(ai - nij + 1) - gammaln(b - nij + 1)
                     - gammaln(n - ai - b + nij + 1))
            total += float((term * np.exp(log_p)).sum())
    return total


def ami(gt: np.ndarray, pred: np.ndarray, pixels: np.ndarray | None = None) -> float:
    """Adjusted mutual information (arithmetic-mean normalisation, natural log)."""
    a = contingency(gt, pred, pixels)
    n = a.sum()
    if n == 0:
        return 1.0
    row, col = a.sum(axis=1), a.sum(axis=0)
    nz = a > 0
    p = a[nz] / n
    mi = float((p * (np.log(a[nz] * n) - np.log(np.outer(row, col)[nz]))).sum())
    emi = expected_mutual_info(row, col)
    denom = (_entropy(row) + _entropy(col)) / 2.0 - emi
    if abs(denom) < 1e-15:
        return 1.0 if _same_partition(a) else 0.0
    return float((mi - emi) / denom)


# --- matching and amodal metrics -------------------------------------------

def overlap_matrix(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """[K_hat, K] pixel overlap between gt objects and predicted object slots."""
    return contingency(gt[..., 1:], pred[..., 1:])


def match_objects(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Permutation xi (length K_hat, 0-based object slot indices) maximising the
    total overlap between gt object k and predicted slot xi[k]."""
    overlap = overlap_matrix(gt, pred)
    K_hat, K = overlap.shape
    if K < K_hat:
        raise ValueError(f"need at least as many predicted slots ({K}) as objects ({K_hat})")
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    xi = np.empty(K_hat, dtype=np.int64)
    xi[rows] = cols
    return xi


def _amodal_terms(gt_shapes: np.ndarray, pred_shapes: np.ndarray, xi: np.ndarray):
    gt = gt_shapes.reshape(-1, gt_shapes.shape[-1]).astype(np.float64)
    pred = pred_shapes.reshape(-1, pred_shapes.shape[-1])[:, xi].astype(np.float64)
    return np.minimum(gt, pred).sum(axis=0), np.maximum(gt, pred).sum(axis=0)


def iou(gt_shapes: np.ndarray, pred_shapes: np.ndarray, xi: np.ndarray) -> float:
    """Soft IoU of matched amodal shapes, averaged over gt objects.

    An object whose gt and matched shapes are both empty scores 1.
    """
    if len(xi) == 0:
        return 1.0
    inter, union = _amodal_terms(gt_shapes, pred_shapes, xi)
    safe = np.where(union > 0, union, 1.0)
    return float(np.where(union > 0, inter / safe, 1.0).mean())


def f1(gt_shapes: np.ndarray, pred_shapes: np.ndarray, xi: np.ndarray) -> float:
    if len(xi) == 0:
        return 1.0
    inter, union = _amodal_terms(gt_shapes, pred_shapes, xi)
    denom = inter + union
    safe = np.where(denom > 0, denom, 1.0)
    return float(np.where(denom > 0, 2.0 * inter / safe, 1.0).mean())


def oca(gt_counts: Sequence[int], pred_counts: Sequence[int]) -> float:
    gt_counts, pred_counts = np.asarray(gt_counts), np.asarray(pred_counts)
    if gt_counts.shape != pred_counts.shape:
        raise ValueError("count lists must have equal length")
    return float(np.mean(gt_counts == pred_counts))


def ooa(gt_order: np.ndarray, pred_order: np.ndarray, gt_shapes: np.ndarray,
        xi: np.ndarray) -> float:
    """Overlap-weighted pairwise ordering accuracy, averaged over views.

    Views where no pair of gt objects overlaps are skipped; NaN if all are.
    """
    K_hat = len(xi)
    i, j = np.triu_indices(K_hat, k=1)
    if len(i) == 0:
        return float("nan")
    s = gt_shapes.astype(np.float64)                          # [M, N, K_hat]
    w = np.einsum("mni,mnj->mij", s, s)[:, i, j]              # [M, P]
    correct = gt_order[:, i, j] == pred_order[:, xi[i], xi[j]]
    totals = w.sum(axis=1)
    keep = totals > 0
    if not keep.any():
        return float("nan")
    per_view = (w * correct).sum(axis=1)[keep] / totals[keep]
    return float(per_view.mean())


# --- per-scene and dataset evaluation --------------------------------------

def score_scene(scene: Scene, seg: SegmentationResult) -> dict[str, float]:
    gt, pred = scene.gt_partition, seg.partition
    objects = gt[..., 0] == 0
    xi = match_objects(gt, pred)
    return {
        "ARI-A": ari(gt, pred),
        "AMI-A": ami(gt, pred),
        "ARI-O": ari(gt, pred, objects) if objects.any() else float("nan"),
        "AMI-O": ami(gt, pred, objects) if objects.any() else float("nan"),
        "IoU": iou(scene.gt_shapes, seg.shapes, xi),
        "F1": f1(scene.gt_shapes, seg.shapes, xi),
        "OCA": float(seg.count == scene.K_hat),
        "OOA": ooa(scene.gt_order, seg.order, scene.gt_shapes, xi),
    }


def view_matching_consistent(scene: Scene, seg: SegmentationResult) -> bool:
    """Match slots to objects in each view on its own; True if every object
    visible in all views maps to the same slot everywhere and that slot
    actually covers part of the object in each view."""
    visible = scene.gt_partition[..., 1:].any(axis=1).all(axis=0)  # [K_hat]
    if not visible.any():
        return True
    perms = []
    for m in range(scene.M):
        gt, pred = scene.gt_partition[m:m + 1], seg.partition[m:m + 1]
        xi = match_objects(gt, pred)
        covered = overlap_matrix(gt, pred)[np.arange(len(xi)), xi] > 0
        if not covered[visible].all():
            return False
        perms.append(xi)
    return all(np.array_equal(p[visible], perms[0][visible]) for p in perms[1:])


def segment_scenes(model, scenes: Sequence[Scene], generator: torch.Generator,
                   mode: CountMode = "ocloc", batch_size: int = 16) -> list[SegmentationResult]:
    """Run inference on each scene (batched where view counts agree)."""
    if mode == "oracle":
        return [from_ground_truth(s, model.cfg.K if model is not None else None) for s in scenes]
    results: list[SegmentationResult | None] = [None] * len(scenes)
    by_m: dict[int, list[int]] = {}
    for i, s in enumerate(scenes):
        by_m.setdefault(s.M, []).append(i)
    for idx in by_m.values():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            x = torch.from_numpy(np.stack([scenes[i].images for i in chunk]))
            params, _, out = model.decompose(x, generator)
            for b, i in enumerate(chunk):
                results[i] = discretize(out.pi[b], out.s_obj[b], out.o[b], params.kappa[b], mode)
    return results


def evaluate_scenes(model, scenes: Sequence[Scene], mode: CountMode = "ocloc",
                    seeds: Iterable[int] = (0, 1, 2)) -> dict:
    """Mean and std over seeded runs of the per-dataset metric means."""
    runs = []
    for seed in seeds:
        gen = torch.Generator().manual_seed(int(seed))
        segs = segment_scenes(model, scenes, gen, mode)
        per_scene = [score_scene(s, seg) for s, seg in zip(scenes, segs)]
        runs.append({name: float(np.nanmean([r[name] for r in per_scene]))
                     if any(np.isfinite(r[name]) for r in per_scene) else float("nan")
                     for name in METRIC_NAMES})
    report = {"mode": mode, "num_scenes": len(scenes), "num_runs": len(runs), "metrics": {}}
    for name in METRIC_NAMES:
        vals = np.array([r[name] for r in runs])
        report["metrics"][name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    report["runs"] = runs
    return report


def format_report(report: dict) -> str:
    lines = [f"mode: {report['mode']}  scenes: {report['num_scenes']}  runs: {report['num_runs']}"]
    for name in METRIC_NAMES:
        m = report["metrics"][name]
        lines.append(f"{name:>6}: {m['mean']:.3f} ± {m['std']:.3f}")
    return "\n".join(lines)
