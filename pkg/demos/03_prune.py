"""Turn an over-connected network into a k-degree one by pruning.

Run:  python3 demos/03_prune.py
"""
import numpy as np

from kdegree import datasets, learning, netcore as nc, pruning

images = datasets.per_class_subset(datasets.load_bundled_subset(), 10).images
spec = nc.TopologySpec((784, 64, 32, 10), (12, 8, 10), partition_layer=1, section_count=4)

# Start from the sectioned dense model: every edge allowed by the hard constraint.
start = nc.init_model(spec, nc.build_dense_mask(spec, sectioned=True), seed=0, scale=0.1)
print("edges before:", start.mask.edge_counts())

audit = pruning.AuditLog()
cfg = pruning.PruneConfig(weight_threshold=0.05, eval_subset_size=16, max_rounds=3)
pruned = pruning.run_procedure_one(start, images, spec, cfg,
                                   learning.TrainConfig(batch_size=10), audit)
print("edges after: ", pruned.mask.edge_counts())
print("exact out-degrees:", all(np.all(pruned.mask.out_degrees(h) == k)
                                for h, k in enumerate(spec.degree_schedule)))

rows = np.array([r[5:8] for r in audit.rows], dtype=float)
print(f"screened {len(rows)} edges, deleted {int(rows[:, 2].sum())} probabilistically;"
      " the rest of the excess was cut by magnitude")
print(f"mean deletion probability {rows[:, 1].mean():.3f}")
