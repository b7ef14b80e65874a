"""Convert a digits CSV (784 pixel columns then a label column) into IDX files.

    python scripts/csv_to_idx.py digits.csv.gz OUT_DIR [--test-fraction 0.2] [--seed 0]

Writes train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte
and t10k-labels-idx1-ubyte into OUT_DIR after a seeded shuffle.
"""

import argparse
from pathlib import Path

import numpy as np

from ltngan.datasets import MNIST_FILES, write_idx


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    table = np.loadtxt(args.csv, delimiter=",", dtype=np.int64)
    if table.shape[1] != 785:
        raise SystemExit(f"expected 785 columns, found {table.shape[1]}")
    order = np.random.default_rng(args.seed).permutation(len(table))
    table = table[order]
    n_test = int(round(len(table) * args.test_fraction))
    splits = {"train": table[n_test:], "test": table[:n_test]}
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for split, rows in splits.items():
        images, labels = MNIST_FILES[split]
        write_idx(args.out_dir / images, rows[:, :784].reshape(-1, 28, 28))
        write_idx(args.out_dir / labels, rows[:, 784])
        print(f"{split}: {len(rows)} images")


if __name__ == "__main__":
    main()
