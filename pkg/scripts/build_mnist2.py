"""Build the 2-class MNIST subset shipped in data/mnist2/.

Source: the 5,000-digit MNIST sample (500 per digit) bundled with mlxtend
(``mlxtend/data/data/mnist_5k.csv.gz``, BSD-3). Digits 0, 3, 8 become class 0
and digits 1, 4, 7 class 1 (1,500 images per class). Each class is split
1,000 train / 500 test with a fixed seed, giving 2,000 / 1,000; each split is
stored in shuffled order.

    pip install mlxtend --no-deps
    python3 scripts/build_mnist2.py [--csv PATH] [--out data/mnist2] [--class0 038 --class1 147]
"""

import argparse
import importlib.util
import os

import numpy as np

from smoothfat.data import Dataset, write_idx


def default_csv():
    spec = importlib.util.find_spec("mlxtend")
    if spec is None:
        raise SystemExit("mlxtend not installed; pass --csv")
    return os.path.join(os.path.dirname(spec.origin), "data", "data", "mnist_5k.csv.gz")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", default=None)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist2"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--class0", default="038", help="digits of class 0")
    ap.add_argument("--class1", default="147", help="digits of class 1")
    args = ap.parse_args()

    table = np.loadtxt(args.csv or default_csv(), delimiter=",", dtype=np.float64)
    pixels, digits = table[:, :-1], table[:, -1].astype(int)
    rng = np.random.default_rng(args.seed)
    groups = [[int(c) for c in args.class0], [int(c) for c in args.class1]]
    if set(groups[0]) & set(groups[1]):
        raise SystemExit("class digit groups overlap")
    label_of = np.full(10, -1)
    train_idx, test_idx = [], []
    for k, group in enumerate(groups):
        label_of[group] = k
        idx = rng.permutation(np.flatnonzero(np.isin(digits, group)))
        n_train = len(idx) * 2 // 3
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    os.makedirs(args.out, exist_ok=True)
    for split, parts in (("train", train_idx), ("t10k", test_idx)):
        idx = rng.permutation(np.concatenate(parts))
        images = (pixels[idx] / 255.0).reshape(-1, 28, 28)
        labels = label_of[digits[idx]].astype(np.int64)
        write_idx(Dataset(images, labels, 2),
                  os.path.join(args.out, f"{split}-images-idx3-ubyte.gz"),
                  os.path.join(args.out, f"{split}-labels-idx1-ubyte.gz"))
        print(f"{split}: {len(idx)} samples, class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main()
