#!/usr/bin/env python3
"""Convert the digit subset shipped in the npm `mnist` package (10k MNIST
digits, pixels stored as 3-decimal floats) into IDX files.

Usage: scripts/mnist_from_npm.py <path-to-npm-package> <out-dir>

Samples are interleaved round-robin across digit classes. Pixels are
rounded back to bytes with round(v * 255).
"""
import json
import struct
import sys
from pathlib import Path

SIDE = 28


def main() -> None:
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    per_digit = []
    for d in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{d}.json").read_text())["data"]
        n = len(raw) // (SIDE * SIDE)
        per_digit.append([raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE] for i in range(n)])

    images, labels = [], []
    k = 0
    while any(k < len(s) for s in per_digit):
        for d, s in enumerate(per_digit):
            if k < len(s):
                images.append(bytes(min(255, max(0, round(v * 255))) for v in s[k]))
                labels.append(d)
        k += 1

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} samples to {out}")


if __name__ == "__main__":
    main()
