"""Datasets: MNIST IDX files, feature scaling, partitioning, synthetic data."""
from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numkit import RngStream
from .objectives import sigmoid

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

DATA_DIR_ENV = "FEDTOP_DATA_DIR"

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


class IdxFormatError(ValueError):
    """Base class for malformed IDX files."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedIdxError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass
class RawDataset:
    """Feature matrix with one example per column, plus integer labels."""

    A: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.labels = np.asarray(self.labels)
        if self.A.ndim != 2 or self.A.shape[1] != self.labels.size:
            raise ValueError("A must be (features x examples) with one label per column")

    @property
    def n_features(self) -> int:
        return self.A.shape[0]

    @property
    def n_examples(self) -> int:
        return self.A.shape[1]

    def subset(self, idx) -> "RawDataset":
        idx = np.asarray(idx, dtype=int)
        return RawDataset(self.A[:, idx], self.labels[idx])


@dataclass
class Partition:
    client_indices: list
    server_indices: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for chunk in (*self.client_indices, self.server_indices):
            s = set(int(i) for i in chunk)
            if seen & s:
                raise ValueError("partition chunks overlap")
            seen |= s
        if any(len(c) == 0 for c in self.client_indices):
            raise ValueError("every client needs at least one example")

    @property
    def n_clients(self) -> int:
        return len(self.client_indices)


# -- IDX ---------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, ndims: int, what: str) -> tuple[tuple, np.ndarray]:
    header = 4 + 4 * ndims
    if len(raw) < 4:
        raise TruncatedIdxError(f"{what}: header truncated ({len(raw)} bytes)")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise BadMagicError(f"{what}: bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedIdxError(f"{what}: header truncated ({len(raw)} bytes)")
    dims = struct.unpack(">" + "I" * ndims, raw[4:header])
    size = math.prod(dims)
    payload = raw[header:]
    if len(payload) < size:
        raise TruncatedIdxError(f"{what}: payload has {len(payload)} bytes, header promises {size}")
    return dims, np.frombuffer(payload, dtype=np.uint8, count=size)


def load_idx(images_path, labels_path) -> RawDataset:
    """Read an IDX image/label file pair (optionally gzipped).

    Each image is flattened row-major into one column of ``A``; pixel values
    are kept as raw 0-255 reals.
    """
    (count, rows, cols), pixels = _parse_idx(_read_bytes(images_path), IDX_IMAGE_MAGIC, 3, "image file")
    (n_labels,), labels = _parse_idx(_read_bytes(labels_path), IDX_LABEL_MAGIC, 1, "label file")
    if count != n_labels:
        raise CountMismatchError(f"image file holds {count} items but label file holds {n_labels}")
    A = pixels.reshape(count, rows * cols).T.astype(float)
    return RawDataset(A, labels.astype(np.int64))


def write_idx(images_path, labels_path, images, labels):
    """Write ``images`` (count x rows x cols, uint8) and ``labels`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes(order="C"))
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


def find_mnist(data_dir=None) -> dict:
    """Locate the four MNIST files under ``data_dir`` (or ``$FEDTOP_DATA_DIR``)."""
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise FileNotFoundError(f"no MNIST directory given and ${DATA_DIR_ENV} is unset")
    base = Path(data_dir)
    found = {}
    for key, names in MNIST_FILES.items():
        for name in names:
            for candidate in (base / name, base / (name + ".gz")):
                if candidate.exists():
                    found[key] = candidate
                    break
            if key in found:
                break
        else:
            raise FileNotFoundError(f"{names[0]} not found in {base}")
    return found


def load_mnist(data_dir=None) -> tuple[RawDataset, RawDataset]:
    files = find_mnist(data_dir)
    train = load_idx(files["train_images"], files["train_labels"])
    test = load_idx(files["test_images"], files["test_labels"])
    return train, test


# -- labels and scaling ------------------------------------------------------

def binarize(labels, positive_digit: int) -> np.ndarray:
    return (np.asarray(labels) == positive_digit).astype(float)


SCALING_MODES = ("none", "approach1", "approach2")


def scaling_offsets(A, mode: str) -> np.ndarray:
    """Per-feature offset subtracted by :func:`scale_features`.

    ``approach1`` is mean/std and ``approach2`` is mean/var along the example
    axis, both with sample (d-1) normalization. Non-finite ratios become 0.
    """
    A = np.asarray(A, dtype=float)
    if mode == "none":
        return np.zeros(A.shape[0])
    if mode not in SCALING_MODES:
        raise ValueError(f"unknown scaling mode {mode!r}")
    if A.shape[1] < 2:
        raise ValueError("feature scaling needs at least two examples")
    mean = A.mean(axis=1)
    spread = A.std(axis=1, ddof=1) if mode == "approach1" else A.var(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = mean / spread
    a[~np.isfinite(a)] = 0.0
    return a


def scale_features(A, mode: str, offsets=None) -> np.ndarray:
    """Subtract a per-feature offset from every example.

    ``offsets`` lets test data reuse the statistics of the training data.
    """
    A = np.asarray(A, dtype=float)
    if mode == "none" and offsets is None:
        return A
    a = scaling_offsets(A, mode) if offsets is None else np.asarray(offsets, dtype=float)
    return A - a[:, None]


# -- partitioning ------------------------------------------------------------

def make_partition(d: int, M: int, mode: str, labels, rng: RngStream, server_size: int = 0) -> Partition:
    """Split example indices ``0..d-1`` among ``M`` clients.

    ``iid`` shuffles before chunking; ``noniid`` stable-sorts by label. Chunk
    sizes differ by at most one. When ``server_size > 0`` a uniformly random
    server shard is carved out first and the clients share the rest.
    """
    if M < 1:
        raise ValueError("need at least one client")
    if server_size < 0:
        raise ValueError("server_size must be non-negative")
    if M + server_size > d:
        raise ValueError(f"cannot give {M} clients a non-empty share of {d - server_size} examples")
    if mode not in ("iid", "noniid"):
        raise ValueError(f"unknown partition mode {mode!r}")
    labels = np.asarray(labels)
    if labels.size != d:
        raise ValueError("need one label per example")

    perm = rng.generator.permutation(d)
    server = np.sort(perm[:server_size])
    pool = perm[server_size:]
    if mode == "iid":
        order = pool
    else:
        pool = np.sort(pool)
        order = pool[np.argsort(labels[pool], kind="stable")]
    clients = [c.tolist() for c in np.array_split(order, M)]
    return Partition(clients, server.tolist())


# -- synthetic data ----------------------------------------------------------

def synth_sparse_logistic(n: int, d_total: int, density: float, rng: RngStream,
                          logit_scale: float = 1.0) -> tuple[RawDataset, np.ndarray]:
    """Sparse logistic-regression data with standard-normal features.

    The true weight vector has ``max(1, ceil(density * n))`` standard-normal
    nonzeros; labels are Bernoulli(sigmoid(logit_scale * a_j^T w)). Large
    ``logit_scale`` approaches noiseless ``sign`` labels.
    """
    if not 0 <= density <= 1:
        raise ValueError("density must lie in [0, 1]")
    gen = rng.generator
    nnz = max(1, math.ceil(density * n))
    true_w = np.zeros(n)
    support = gen.choice(n, size=nnz, replace=False)
    true_w[support] = gen.standard_normal(nnz)
    A = gen.standard_normal((n, d_total))
    p = sigmoid(logit_scale * (A.T @ true_w))
    t = (gen.random(d_total) < p).astype(np.int64)
    return RawDataset(A, t), true_w


def train_test_split(ds: RawDataset, holdout: float, rng: RngStream) -> tuple[RawDataset, RawDataset]:
    if not 0 <= holdout < 1:
        raise ValueError("holdout fraction must lie in [0, 1)")
    perm = rng.generator.permutation(ds.n_examples)
    n_test = int(round(holdout * ds.n_examples))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))
