"""Write the bundled 5000-image MNIST subset as gzip IDX files.

The source is the ``mnist_5k.csv.gz`` file that ships inside the mlxtend
wheel (500 images per class, raster-ordered 784 pixel columns followed by
the label).  Usage::

    pip download --no-deps -d /tmp/whl mlxtend
    python scripts/build_mnist_subset.py /tmp/whl/mlxtend-*.whl src/kdegree/data
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def main(wheel, out_dir):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(raw.decode().splitlines(), delimiter=",", dtype=np.int64)
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    n = len(labels)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archives byte-reproducible
    with open(out / "mnist5k-images-idx3-ubyte.gz", "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(struct.pack(">IIII", 0x803, n, 28, 28) + pixels.tobytes())
    with open(out / "mnist5k-labels-idx1-ubyte.gz", "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(struct.pack(">II", 0x801, n) + labels.tobytes())


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
