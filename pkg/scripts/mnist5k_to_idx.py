"""Write the 5000-image MNIST sample bundled with mlxtend as IDX files.

Usage: python scripts/mnist5k_to_idx.py OUT_DIR

Produces train-images-idx3-ubyte / train-labels-idx1-ubyte (4000 images)
and t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte (1000 images, 100 per
class) so that ``TANSENS_DATA_ROOT=OUT_DIR`` works with ``dataset = mnist``.
"""

import importlib.resources
import sys

from tansens.data import idx_from_pixel_csv


def main(out_dir):
    csv_path = importlib.resources.files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
    for name, path in idx_from_pixel_csv(str(csv_path), out_dir).items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    main(sys.argv[1])
