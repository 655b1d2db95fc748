"""Scoring a decomposition against ground truth.

ARI and AMI compare pixel partitions without caring about label names; the
"-A" variants score every pixel and the "-O" variants only pixels on objects.
Slots are matched to objects by maximum overlap before the per-object scores
(IoU, F1 of full silhouettes, occlusion order) are taken.

    python demos/03_metrics.py
"""

import numpy as np

from ocloc.data import GeneratorSpec, generate_dataset
from ocloc.metrics import (SegmentationResult, ari, ami, count_objects_heuristic, from_ground_truth,
                           match_objects, one_hot, score_scene)

labels = np.array([[0, 0, 1, 1, 2, 2, 0, 0]])
gt = one_hot(labels, 3)
print("identical partition, relabelled:", ari(gt, one_hot(np.array([[3, 3, 0, 0, 1, 1, 3, 3]]), 4)))
print("everything in one slot:", ari(gt, one_hot(np.zeros_like(labels), 3)))
print("one pixel wrong: ARI %.3f  AMI %.3f" % (
    ari(gt, one_hot(np.array([[0, 0, 1, 1, 2, 2, 0, 1]]), 3)),
    ami(gt, one_hot(np.array([[0, 0, 1, 1, 2, 2, 0, 1]]), 3))))

scene = generate_dataset(GeneratorSpec(object_count_range=(3, 3)), 1, seed=5)[0]
perfect = from_ground_truth(scene, K=5)
print("\nground truth scored against itself:")
for name, value in score_scene(scene, perfect).items():
    print(f"  {name:>6}: {value:.3f}")

# move object 1 into slot 4 and merge object 2 into the background
part = perfect.partition.copy()
part[..., 4] = part[..., 1]
part[..., 1] = 0
part[..., 0] += part[..., 2]
part[..., 2] = 0
damaged = SegmentationResult(part, perfect.shapes, perfect.order, count_objects_heuristic(part),
                             perfect.presence)
print("\nslot permuted and one object lost:")
print("  matching object -> slot (slot 0 is the background):",
      match_objects(scene.gt_partition, part) + 0)
for name, value in score_scene(scene, damaged).items():
    print(f"  {name:>6}: {value:.3f}")
