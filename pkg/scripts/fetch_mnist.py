"""Materialize the MNIST subset used by the MNIST configs as IDX files.

    python scripts/fetch_mnist.py [--out data/mnist] [--n-test 1000] [--seed 0]

The images come from the 5,000-sample MNIST extract bundled with mlxtend,
so no download from the MNIST mirrors is needed.
"""

import argparse

from rat.data import export_mnist_subset, load_idx

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--n-test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    paths = export_mnist_subset(args.out, args.n_test, args.seed)
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out}")
