"""Convert the per-class JSON bundle of the ``fashion-mnist`` npm package to IDX files.

The bundle stores 7000 images per class (the 60000/10000 split is not kept).
The first 6000 images of every class go to the training file, the remaining
1000 to the test file; each split is then permuted with a fixed seed so the
files are not class-sorted.

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python tools/fashion_json_to_idx.py package/src/clothes /root/data/fashion-mnist
"""
import argparse
import json
import struct
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 6000
TEST_PER_CLASS = 1000


def write_idx(out_dir: Path, prefix: str, images: np.ndarray, labels: np.ndarray) -> None:
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("clothes_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    train_x, train_y, test_x, test_y = [], [], [], []
    for label in range(10):
        rows = json.loads((args.clothes_dir / f"{label}.json").read_text())["data"]
        rows = [r for r in rows if len(r) == 784]
        arr = np.asarray(rows, dtype=np.uint8).reshape(-1, 28, 28)
        if len(arr) < TRAIN_PER_CLASS + TEST_PER_CLASS:
            raise SystemExit(f"class {label}: only {len(arr)} images")
        train_x.append(arr[:TRAIN_PER_CLASS])
        test_x.append(arr[TRAIN_PER_CLASS:TRAIN_PER_CLASS + TEST_PER_CLASS])
        train_y.append(np.full(TRAIN_PER_CLASS, label, np.uint8))
        test_y.append(np.full(TEST_PER_CLASS, label, np.uint8))

    rng = np.random.default_rng(args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for prefix, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
        x, y = np.concatenate(xs), np.concatenate(ys)
        perm = rng.permutation(len(x))
        write_idx(args.out_dir, prefix, x[perm], y[perm])
        print(f"{prefix}: {len(x)} images")


if __name__ == "__main__":
    main()
