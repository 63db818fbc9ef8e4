"""Build the digits-0/1 MNIST fixture used by the desk-scale training test.

The fixture is carved from the 5000-image MNIST subset shipped inside the
`mlxtend` wheel (500 images per digit, 28x28, uint8). Only digits 0 and 1
are kept and written as standard big-endian IDX files.

    pip download --no-deps -d /tmp/wheels mlxtend
    python3 scripts/make_mnist01_fixture.py /tmp/wheels/mlxtend-*.whl
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/data/mnist01"


def main(wheel):
    with zipfile.ZipFile(wheel) as zf:
        raw = zf.read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.genfromtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    keep = (labels == 0) | (labels == 1)
    pixels, labels = pixels[keep], labels[keep]
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(pixels), 28, 28))
        f.write(pixels.tobytes())
    with open(OUT / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(labels)} images to {OUT}")


if __name__ == "__main__":
    main(sys.argv[1])
