#!/usr/bin/env python3
"""Build the MNIST-10k IDX fixture from the digit JSON files of the npm `mnist` package.

The package stores 10,000 MNIST digits grouped by class as pixel/255 values rounded
to three decimals; rounding back to bytes is exact. Samples are interleaved with a
fixed permutation so that any prefix is class-balanced in expectation.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist10k.py package/src/digits data/
"""
import json
import struct
import sys
import tarfile
from pathlib import Path

import numpy as np


def main(digits_dir: Path, out_dir: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((digits_dir / f"{digit}.json").read_text())["data"])
        pixels = np.rint(raw * 255.0).astype(np.uint8).reshape(-1, 28, 28)
        images.append(pixels)
        labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(20240601).permutation(len(labels))
    images, labels = images[order], labels[order]

    out_dir.mkdir(parents=True, exist_ok=True)
    img_path = out_dir / "mnist10k-images-idx3-ubyte"
    lbl_path = out_dir / "mnist10k-labels-idx1-ubyte"
    img_path.write_bytes(struct.pack(">IIII", 0x803, len(images), 28, 28) + images.tobytes())
    lbl_path.write_bytes(struct.pack(">II", 0x801, len(labels)) + labels.tobytes())
    with tarfile.open(out_dir / "mnist10k.tar.gz", "w:gz") as tar:
        for p in (img_path, lbl_path):
            tar.add(p, arcname=p.name)
    img_path.unlink()
    lbl_path.unlink()
    print(f"wrote {len(labels)} samples, class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
