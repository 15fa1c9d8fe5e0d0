#!/usr/bin/env python3
"""Rebuild gzipped IDX files from the 10,000 MNIST digits bundled in the npm
`mnist` package (`npm pack mnist`, then extract).

The package stores each pixel as round(byte / 255, 3), which is lossless at
that resolution, so the original bytes are recovered exactly.

usage: prepare_mnist.py <extracted-package-dir> <out-dir>
"""
import gzip
import json
import os
import random
import struct
import sys

TRAIN = 8000


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    samples = []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            values = json.load(f)["data"]
        for start in range(0, len(values), 784):
            pixels = [int(round(v * 255)) for v in values[start:start + 784]]
            for v, p in zip(values[start:start + 784], pixels):
                assert round(p / 255, 3) == v, "lossy pixel"
            samples.append((pixels, digit))
    random.Random(20220101).shuffle(samples)
    os.makedirs(out, exist_ok=True)
    for name, part in (("train", samples[:TRAIN]), ("t10k", samples[TRAIN:])):
        write_idx(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), 0x803,
                  [len(part), 28, 28], [p for pixels, _ in part for p in pixels])
        write_idx(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), 0x801,
                  [len(part)], [label for _, label in part])
        print(name, len(part))


if __name__ == "__main__":
    main()
