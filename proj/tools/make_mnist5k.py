#!/usr/bin/env python3
"""Build the bundled 5000-sample MNIST pool as raw IDX files.

The source is the 5k MNIST excerpt shipped inside the mlxtend wheel
(500 images per class, stored class-sorted). Samples are permuted with a
fixed seed so that dataset order is class-mixed like the original MNIST
training file, then written as big-endian IDX (2051 images, 2049 labels).

    python3 tools/make_mnist5k.py [--wheel path/to/mlxtend.whl] [--out data/mnist5k]
"""
import argparse
import glob
import gzip
import io
import os
import struct
import subprocess
import tempfile
import zipfile

import numpy as np

PERMUTATION_SEED = 20231015


def locate_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp()
    subprocess.check_call(["pip", "download", "--no-deps", "-d", tmp, "mlxtend==0.24.0"])
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--wheel")
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k"))
    args = parser.parse_args()

    with zipfile.ZipFile(locate_wheel(args.wheel)) as wheel:
        raw = gzip.decompress(wheel.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)

    order = np.random.default_rng(PERMUTATION_SEED).permutation(len(labels))
    images, labels = images[order], labels[order]

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(labels), 28, 28))
        f.write(images.tobytes())
    with open(os.path.join(args.out, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(labels)} samples to {args.out}")


if __name__ == "__main__":
    main()
