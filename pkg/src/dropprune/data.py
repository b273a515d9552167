"""Dataset ingestion: IDX-format MNIST and seeded synthetic blobs.

MNIST files are user-supplied; the library never touches the network. The
CLI's `train --fetch` helper downloads into a cache directory for users who
do have connectivity. The cache directory defaults to ./data and can be
overridden with the DPRUNE_DATA_DIR environment variable.
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from dropprune.sampling import make_rng

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_MNIST_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"


class IdxFormatError(ValueError):
    """Malformed IDX file: wrong magic, truncation, or count mismatch."""


@dataclass(frozen=True)
class Dataset:
    """Inputs in [0,1], integer labels, and a split tag."""

    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on sample count")

    @property
    def size(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx(images_path, labels_path, split="train"):
    """Parse a big-endian IDX image/label pair into a Dataset.

    Pixels are flattened row-major and scaled by 1/255; image and label
    counts must agree.
    """
    img = _read_bytes(images_path)
    if len(img) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    magic, n, rows, cols = struct.unpack_from(">IIII", img, 0)
    if magic != _IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x}, want 0x{_IMAGES_MAGIC:08x}")
    body = n * rows * cols
    if len(img) - 16 != body:
        raise IdxFormatError(f"{images_path}: expected {body} pixel bytes, found {len(img) - 16}")
    pixels = np.frombuffer(img, dtype=np.uint8, count=body, offset=16)
    inputs = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0

    lab = _read_bytes(labels_path)
    if len(lab) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header")
    magic, n_lab = struct.unpack_from(">II", lab, 0)
    if magic != _LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{magic:08x}, want 0x{_LABELS_MAGIC:08x}")
    if len(lab) - 8 != n_lab:
        raise IdxFormatError(f"{labels_path}: expected {n_lab} label bytes, found {len(lab) - 8}")
    if n_lab != n:
        raise IdxFormatError(f"image count {n} != label count {n_lab}")
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    return Dataset(inputs=inputs, labels=labels, split=split)


def data_dir(override=None):
    """Resolve the dataset cache directory (flag > env > ./data)."""
    return override or os.environ.get("DPRUNE_DATA_DIR") or os.path.join(os.getcwd(), "data")


def find_mnist(directory, split):
    """Locate the IDX pair for a split, accepting .gz variants; None if absent."""
    images, labels = MNIST_FILES[split]
    found = []
    for name in (images, labels):
        for candidate in (name, name + ".gz"):
            path = os.path.join(directory, candidate)
            if os.path.exists(path):
                found.append(path)
                break
        else:
            return None
    return tuple(found)


def load_mnist(directory, split):
    pair = find_mnist(directory, split)
    if pair is None:
        raise FileNotFoundError(
            f"MNIST {split} IDX files not found under {directory}; place the "
            f"standard files there or run `dropprune train --fetch`"
        )
    return load_idx(pair[0], pair[1], split=split)


def download_mnist(directory):
    """Fetch the four canonical MNIST .gz files into `directory` (CLI helper)."""
    import urllib.request

    os.makedirs(directory, exist_ok=True)
    paths = []
    for images, labels in MNIST_FILES.values():
        for name in (images, labels):
            gz = name + ".gz"
            dest = os.path.join(directory, gz)
            if not os.path.exists(dest):
                urllib.request.urlretrieve(_MNIST_BASE_URL + gz, dest)
            paths.append(dest)
    return paths


def synth_blobs(seed, classes, per_class, dim, spread):
    """Gaussian blobs around seeded random centers, shuffled, labels 0..classes-1.

    Inputs are min-max rescaled into [0,1] per dimension (degenerate
    dimensions map to 0), so synthetic sets obey the same normalization
    contract as image data.
    """
    if classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("classes, per_class and dim must all be positive")
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    rng = make_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(classes, dim))
    inputs = np.repeat(centers, per_class, axis=0)
    if spread > 0:
        inputs = inputs + rng.normal(0.0, spread, size=inputs.shape)
    lo, hi = inputs.min(axis=0), inputs.max(axis=0)
    span = hi - lo
    span[span == 0.0] = 1.0
    inputs = (inputs - lo) / span
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    order = rng.permutation(classes * per_class)
    return Dataset(inputs=inputs[order], labels=labels[order], split="train")
