"""Build the desk-scale MNIST split (IDX, gzipped) from mlxtend's 5k sample.

mlxtend bundles 5000 MNIST digits (500 per class) as ``mnist_5k.csv.gz``.
They are shuffled with a fixed seed and split 4000 train / 1000 test.

    python tools/build_desk_mnist.py [--csv PATH] [--out data/mnist5k]
"""
from __future__ import annotations

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from faithbench.data import write_idx


def _read_csv(path: Path) -> np.ndarray:
    if path.suffix == ".whl":
        with zipfile.ZipFile(path) as zf:
            raw = zf.read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = path.read_bytes()
    return np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")


def _default_csv() -> Path:
    import mlxtend.data

    return Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--csv", type=Path, default=None, help="mnist_5k.csv.gz or an mlxtend wheel")
    ap.add_argument("--out", type=Path, default=Path("data/mnist5k"))
    ap.add_argument("--train", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    table = _read_csv(args.csv or _default_csv())
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]

    args.out.mkdir(parents=True, exist_ok=True)
    n = args.train
    for name, arr in [
        ("train-images-idx3-ubyte.gz", pixels[:n]),
        ("train-labels-idx1-ubyte.gz", labels[:n]),
        ("t10k-images-idx3-ubyte.gz", pixels[n:]),
        ("t10k-labels-idx1-ubyte.gz", labels[n:]),
    ]:
        write_idx(args.out / name, arr)
        print(f"wrote {args.out / name} {arr.shape}")


if __name__ == "__main__":
    main()
