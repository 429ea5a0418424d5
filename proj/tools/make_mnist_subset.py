#!/usr/bin/env python3
"""Build IDX files from the digit subset shipped in the `mnist` npm package.

The package (https://github.com/cazala/mnist) stores 10000 MNIST digits as
JSON arrays of 784 grayscale values in [0, 1], grouped by label. This script
shuffles them with a fixed seed and writes a train/test split in the standard
IDX layout, gzip-compressed.

    npm pack mnist@1.1.0
    python3 tools/make_mnist_subset.py mnist-1.1.0.tgz data/mnist
"""

import argparse
import gzip
import json
import random
import struct
import tarfile
from pathlib import Path

PIXELS = 28 * 28


def read_digits(tarball):
    samples = []
    with tarfile.open(tarball) as archive:
        for label in range(10):
            member = archive.extractfile(f"package/src/digits/{label}.json")
            values = json.load(member)["data"]
            if len(values) % PIXELS:
                raise SystemExit(f"digit {label}: {len(values)} values is not a multiple of {PIXELS}")
            for start in range(0, len(values), PIXELS):
                pixels = bytes(round(v * 255) for v in values[start:start + PIXELS])
                samples.append((pixels, label))
    return samples


def write_pair(samples, images_path, labels_path):
    with gzip.GzipFile(images_path, "wb", mtime=0) as out:
        out.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for pixels, _ in samples:
            out.write(pixels)
    with gzip.GzipFile(labels_path, "wb", mtime=0) as out:
        out.write(struct.pack(">II", 0x801, len(samples)))
        out.write(bytes(label for _, label in samples))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("tarball", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--train", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    samples = read_digits(args.tarball)
    random.Random(args.seed).shuffle(samples)
    train, test = samples[:args.train], samples[args.train:]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_pair(train, args.out_dir / "train-images-idx3-ubyte.gz", args.out_dir / "train-labels-idx1-ubyte.gz")
    write_pair(test, args.out_dir / "t10k-images-idx3-ubyte.gz", args.out_dir / "t10k-labels-idx1-ubyte.gz")
    print(f"wrote {len(train)} training and {len(test)} test samples to {args.out_dir}")


if __name__ == "__main__":
    main()
