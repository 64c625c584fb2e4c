#!/usr/bin/env python3
"""Assemble MNIST-format IDX files from digit dumps bundled in public packages.

Sources (fetched through the package index, no dataset download needed):
  * npm `mnist` 1.1.0: src/digits/<d>.json, pixels stored as value/255 (3 decimals)
  * PyPI `mlxtend` 0.24.0: mlxtend/data/data/mnist_5k.csv.gz (784 bytes + label)

Duplicate images are removed, the pool is shuffled with a fixed seed and split
into train/test IDX files (gzip-compressed) under data/mnist/.

usage: build_mnist_idx.py <npm-package-dir> <mlxtend-wheel> <out-dir>
"""
import gzip
import hashlib
import json
import random
import struct
import sys
import zipfile
from pathlib import Path

TEST_COUNT = 3000
SEED = 20180706


def npm_digits(root):
    out = []
    for d in range(10):
        data = json.load(open(Path(root) / "src" / "digits" / f"{d}.json"))["data"]
        n = len(data) // 784
        for i in range(n):
            px = bytes(int(round(v * 255)) for v in data[i * 784:(i + 1) * 784])
            out.append((px, d))
    return out


def mlxtend_digits(wheel):
    z = zipfile.ZipFile(wheel)
    text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    out = []
    for line in text.splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        out.append((bytes(vals[:784]), vals[784]))
    return out


def write_idx(out, stem, items):
    n = len(items)
    img = struct.pack(">IIII", 0x00000803, n, 28, 28) + b"".join(p for p, _ in items)
    lab = struct.pack(">II", 0x00000801, n) + bytes(l for _, l in items)
    for name, payload in ((f"{stem}-images-idx3-ubyte.gz", img), (f"{stem}-labels-idx1-ubyte.gz", lab)):
        with open(out / name, "wb") as fh:
            fh.write(gzip.compress(payload, mtime=0))


def main():
    npm_dir, wheel, out = sys.argv[1], sys.argv[2], Path(sys.argv[3])
    out.mkdir(parents=True, exist_ok=True)
    pool, seen = [], set()
    # near-duplicates from the 3-decimal rounding collapse to the same bytes only
    # when identical; compare on a coarse key to also drop those.
    for px, label in npm_digits(npm_dir) + mlxtend_digits(wheel):
        key = hashlib.sha1(bytes(p >> 3 for p in px)).digest()
        if key in seen:
            continue
        seen.add(key)
        pool.append((px, label))
    random.Random(SEED).shuffle(pool)
    test, train = pool[:TEST_COUNT], pool[TEST_COUNT:]
    write_idx(out, "train", train)
    write_idx(out, "test", test)
    print(f"pool={len(pool)} train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
