"""Datasets: MNIST IDX and CIFAR-10 binary loaders, synthetic blobs, views.

Pixels are mapped to ``[0, 1]`` by dividing by 255 at load time.  Labels
are kept as integers (``0..9``) and the ``+-1`` one-vs-rest views are
derived on demand, or are already ``+-1`` for synthetic binary data.
"""

import gzip
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor_core import DTYPE, make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
DATA_ROOT_ENV = "TANSENS_DATA_ROOT"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    signed: bool = False
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=DTYPE)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-d array (n, n_in)")
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise ValueError("labels and inputs have different lengths")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_in(self):
        return self.inputs.shape[1]

    @property
    def kx(self):
        """Largest input norm in the dataset."""
        if len(self) == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.inputs, axis=1)))

    def targets(self, n_out):
        """``+-1`` target matrix ``(n, n_out)``.

        Signed data needs ``n_out == 1``; class-labelled data gets one
        one-vs-rest column per output neuron.
        """
        if self.signed:
            if n_out != 1:
                raise ValueError("signed labels only define a single output")
            return self.labels[:, None].astype(DTYPE)
        if np.any(self.labels >= n_out):
            raise ValueError("label exceeds the number of output neurons")
        Y = -np.ones((len(self), n_out), dtype=DTYPE)
        Y[np.arange(len(self)), self.labels] = 1.0
        return Y

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, inputs=self.inputs[idx], labels=self.labels[idx])


def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, expected_magic, ndim):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 + 4 * ndim:
        raise DataFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    sizes = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    payload = raw[4 + 4 * ndim:]
    need = int(np.prod(sizes, dtype=np.int64))
    if len(payload) < need:
        raise DataFormatError(f"{path}: truncated file ({len(payload)} of {need} payload bytes)")
    if len(payload) > need:
        raise DataFormatError(f"{path}: {len(payload) - need} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(sizes)


def load_mnist_idx(image_path, label_path, split="train"):
    images = _read_idx(image_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(label_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    n = images.shape[0]
    X = images.reshape(n, int(np.prod(images.shape[1:]))).astype(DTYPE) / 255.0
    return Dataset(X, labels.astype(np.int64), split, normalization={"pixel_scale": 255.0})


def write_mnist_idx(image_path, label_path, images, labels):
    """Write uint8 ``images (n, rows, cols)`` and ``labels (n,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (n, rows, cols)")
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_cifar10_bin(batch_paths, split="train"):
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    inputs, labels = [], []
    for path in batch_paths:
        with _open(path) as fh:
            raw = fh.read()
        if len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: truncated record (length {len(raw)} not a multiple of {CIFAR_RECORD})")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if np.any(rec[:, 0] > 9):
            raise DataFormatError(f"{path}: label byte > 9")
        labels.append(rec[:, 0].astype(np.int64))
        inputs.append(rec[:, 1:].astype(DTYPE) / 255.0)
    X = np.concatenate(inputs) if inputs else np.zeros((0, CIFAR_PIXELS))
    y = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    return Dataset(X, y, split, normalization={"pixel_scale": 255.0})


def write_cifar10_bin(path, pixels, labels):
    """Write uint8 ``pixels (n, 3072)`` (channel-major) with labels as one batch file."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, CIFAR_PIXELS)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    with open(path, "wb") as fh:
        fh.write(np.concatenate([labels, pixels], axis=1).tobytes())


def dataset_to_bytes(data):
    """Recover uint8 pixels from a ``/255`` dataset (for round-trip writers)."""
    return np.rint(data.inputs * 255.0).astype(np.uint8)


def one_vs_rest(data, class_i):
    if data.signed or (len(data) and (data.labels.min() < 0 or data.labels.max() > 9)):
        raise ValueError("one_vs_rest needs integer class labels 0..9")
    if not 0 <= class_i <= 9:
        raise ValueError(f"class {class_i} out of range 0..9")
    y = np.where(data.labels == class_i, 1, -1)
    return replace(data, labels=y, signed=True)


def synth_blobs(n_per_class, dim, separation, seed=0, split="train"):
    """Two unit-covariance Gaussian clusters at ``+-(separation/2) e_1``, labels +-1."""
    if n_per_class < 1 or dim < 1:
        raise ValueError("need n_per_class >= 1 and dim >= 1")
    rng = make_rng(seed)
    center = np.zeros(dim)
    center[0] = separation / 2.0
    pos = rng.standard_normal((n_per_class, dim)) + center
    neg = rng.standard_normal((n_per_class, dim)) - center
    X = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(n_per_class, dtype=np.int64), -np.ones(n_per_class, dtype=np.int64)])
    order = rng.permutation(2 * n_per_class)
    return Dataset(X[order], y[order], split, signed=True)


def subsample(data, n, seed=0, stratified=True):
    if n > len(data):
        raise ValueError(f"cannot subsample {n} from {len(data)} samples")
    rng = make_rng(seed)
    if not stratified:
        return data.take(rng.permutation(len(data))[:n])
    classes = np.unique(data.labels)
    per = {c: np.flatnonzero(data.labels == c) for c in classes}
    base, extra = divmod(n, len(classes))
    picked = []
    for j, c in enumerate(classes):
        want = base + (1 if j < extra else 0)
        if want > per[c].size:
            raise ValueError(f"class {c} has only {per[c].size} samples, need {want}")
        picked.append(rng.permutation(per[c])[:want])
    idx = np.concatenate(picked)
    return data.take(idx[rng.permutation(idx.size)])


def normalize(data, mode="global-unit-sup-norm", reference=None):
    """Rescale inputs; the applied ``(shift, scale)`` is recorded.

    ``reference`` (usually the training split) supplies the statistics so
    train and test share one transform.
    """
    ref = data if reference is None else reference
    if mode == "none":
        return data
    if mode == "per-pixel-01":
        lo = ref.inputs.min(axis=0)
        span = ref.inputs.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        X = (data.inputs - lo) / span
        norm = {"mode": mode, "shift": lo, "scale": span}
    elif mode == "global-unit-sup-norm":
        s = ref.kx
        s = s if s > 0 else 1.0
        X = data.inputs / s
        norm = {"mode": mode, "shift": 0.0, "scale": s}
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    out = replace(data, inputs=X, normalization={**data.normalization, **norm})
    out.normalization["kx"] = out.kx
    return out


def resolve_data_root(root=None):
    return root or os.environ.get(DATA_ROOT_ENV)


def find_file(root, name):
    for candidate in (name, name + ".gz"):
        path = os.path.join(root, candidate)
        if os.path.exists(path):
            return path
    return os.path.join(root, name)


def idx_from_pixel_csv(csv_path, out_dir, test_per_class=100, seed=0, side=28):
    """Split a ``pixels..., label`` CSV (optionally gzipped) into MNIST-named IDX files.

    The test split takes ``test_per_class`` images of every class; the rest
    become the training split.  Returns the four written paths.
    """
    with _open(csv_path) as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    if pixels.shape[1] != side * side or pixels.min() < 0 or pixels.max() > 255:
        raise DataFormatError(f"{csv_path}: expected {side * side} pixel columns with values 0..255")
    rng = make_rng(seed)
    test_idx = np.concatenate([rng.permutation(np.flatnonzero(labels == c))[:test_per_class]
                               for c in np.unique(labels)])
    is_test = np.zeros(labels.size, dtype=bool)
    is_test[test_idx] = True
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in MNIST_FILES.items()}
    for split, mask in (("train", ~is_test), ("test", is_test)):
        write_mnist_idx(paths[f"{split}_images"], paths[f"{split}_labels"],
                        pixels[mask].reshape(-1, side, side), labels[mask])
    return paths
