#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into IDX files.

The package ships roughly 10k MNIST digits as per-class JSON arrays of
pixel intensities in [0, 1]. This script quantizes them back to bytes and
writes two standard IDX pairs:

  t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte    first N_SOURCE per class
  train-images-idx3-ubyte / train-labels-idx1-ubyte  the rest

Usage:
  npm pack mnist && tar xzf mnist-*.tgz
  python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import json
import os
import struct
import sys

N_SOURCE = 200
SIDE = 28


def write_idx(prefix, images, labels):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = sys.argv[1], sys.argv[2]
    os.makedirs(out, exist_ok=True)
    per = SIDE * SIDE
    pools = {"t10k": ([], []), "train": ([], [])}
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = json.load(f)["data"]
        count = len(raw) // per
        for k in range(count):
            img = [min(255, max(0, round(v * 255))) for v in raw[k * per:(k + 1) * per]]
            pool = pools["t10k" if k < N_SOURCE else "train"]
            pool[0].append(img)
            pool[1].append(digit)
    for name, (images, labels) in pools.items():
        write_idx(os.path.join(out, name), images, labels)
        print(f"{name}: {len(labels)} images")


if __name__ == "__main__":
    main()
