#!/usr/bin/env python3
"""Convert the digits shipped in the `mnist` npm package (cazala/mnist 1.1.0)
into gzipped IDX files laid out like the original MNIST distribution.

The npm package stores 10,000 MNIST digits as pixel/255 rounded to three
decimals; round(v * 255) recovers the original bytes. Each digit class is
split 80/20 into train/t10k, and both splits are shuffled with a fixed seed.

usage: mnist_subset_from_npm.py <package_dir> <out_dir>
"""
import gzip
import json
import os
import random
import struct
import sys


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main(pkg, out):
    train, test = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            raw = json.load(f)["data"]
        count = len(raw) // 784
        for i in range(count):
            img = [min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784]]
            (train if i < count * 8 // 10 else test).append((img, digit))
    rng = random.Random(20210601)
    for split, rows in (("train", train), ("t10k", test)):
        rng.shuffle(rows)
        pixels = [p for img, _ in rows for p in img]
        labels = [label for _, label in rows]
        write_idx(os.path.join(out, f"{split}-images-idx3-ubyte.gz"), 0x803, [len(rows), 28, 28], pixels)
        write_idx(os.path.join(out, f"{split}-labels-idx1-ubyte.gz"), 0x801, [len(rows)], labels)
        print(split, len(rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
