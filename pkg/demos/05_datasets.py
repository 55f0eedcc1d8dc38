"""Load MNIST from IDX files, split images across verge machines and replicate data.

Run:  python3 demos/05_datasets.py
"""
from collections import Counter

from kdegree import datasets

full = datasets.load_bundled_subset()
print("bundled subset:", full.images.shape, "fingerprint", full.fingerprint()[:16])
print("labels:", dict(sorted(Counter(full.labels.tolist()).items())))

splits = datasets.desk_splits(full, 100, 100, 300)
print({k: len(v) for k, v in splits.items()})

# Each verge machine only sees its own block of pixels.
sharded = datasets.split_m(splits["train"], 5)
print("shard widths:", sharded.shard_widths, "pixel bounds:", sharded.bounds)
assert (sharded.reassemble() == splits["train"].images).all()

# Larger data sizes are simulated by replicating the training set.
x5 = datasets.replicate_x(splits["train"], 5, seed=0)
print("x5 training set:", len(x5), "samples")
