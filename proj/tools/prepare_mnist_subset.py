#!/usr/bin/env python3
"""Build IDX files for the 5000-sample MNIST subset bundled with mlxtend.

The full MNIST archive is not always reachable from build machines, but the
mlxtend wheel on PyPI ships a balanced 5000-image subset (500 per digit) as a
CSV. This script pulls that wheel (or uses one given with --wheel), converts
the CSV to the standard uncompressed IDX pair and optionally packs them into a
.tar.gz that CMake unpacks at configure time.

    python3 tools/prepare_mnist_subset.py --out data/mnist
    python3 tools/prepare_mnist_subset.py --out data/mnist --tarball data/mnist5k.tar.gz
"""

import argparse
import glob
import gzip
import os
import struct
import subprocess
import tarfile
import tempfile
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.run(
        ["pip", "download", "--no-deps", "--dest", dest, "mlxtend"],
        check=True,
    )
    wheels = sorted(glob.glob(os.path.join(dest, "mlxtend-*.whl")))
    if not wheels:
        raise SystemExit("pip download did not produce an mlxtend wheel")
    return wheels[-1]


def write_idx(out_dir, pixels, labels):
    os.makedirs(out_dir, exist_ok=True)
    n = len(labels)
    with open(os.path.join(out_dir, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        for row in pixels:
            f.write(bytes(row))
    with open(os.path.join(out_dir, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel", help="path to an mlxtend wheel (downloaded if omitted)")
    ap.add_argument("--out", required=True, help="directory for the IDX files")
    ap.add_argument("--tarball", help="optional .tar.gz to pack the IDX files into")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = gzip.decompress(zipfile.ZipFile(wheel).read(CSV_MEMBER)).decode()

    pixels, labels = [], []
    for line in raw.strip().splitlines():
        fields = [int(float(v)) for v in line.split(",")]
        pixels.append(fields[:-1])
        labels.append(fields[-1])
    assert all(len(p) == 784 for p in pixels)

    write_idx(args.out, pixels, labels)
    print(f"wrote {len(labels)} samples to {args.out}")

    if args.tarball:
        with tarfile.open(args.tarball, "w:gz") as tar:
            for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
                tar.add(os.path.join(args.out, name), arcname=name)
        print(f"packed {args.tarball}")


if __name__ == "__main__":
    main()
