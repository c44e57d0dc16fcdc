"""Dataset ingestion (MNIST IDX files, synthetic blobs) and participant splits."""
import gzip
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DegeneratePlan, DimensionMismatch, InsufficientData, TruncatedFile

IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_MAGIC = 0x00000803

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

SCHEMES = ("uniform", "powerlaw", "classimbalance")

# size_n / size_1 for the powerlaw split
POWERLAW_RATIO = 5.0


@dataclass(frozen=True)
class DataShard:
    features: np.ndarray
    labels: np.ndarray
    # positions in the source dataset, used to check disjointness of splits
    source_index: np.ndarray = None

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionMismatch(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def num_classes_present(self):
        return int(np.unique(self.labels).size)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        src = self.source_index[idx] if self.source_index is not None else idx
        return DataShard(self.features[idx], self.labels[idx], src)

    def with_labels(self, labels):
        return DataShard(self.features, np.asarray(labels, dtype=self.labels.dtype), self.source_index)


@dataclass(frozen=True)
class SplitPlan:
    scheme: str
    num_participants: int
    total_examples: int
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown split scheme {self.scheme!r}")
        if self.num_participants < 2:
            raise ValueError("num_participants must be >= 2")
        if self.total_examples < self.num_participants:
            raise ValueError("total_examples must be >= num_participants")


# ---------------------------------------------------------------- IDX / MNIST

def _open(path):
    if os.path.exists(path):
        return open(path, "rb")
    if os.path.exists(path + ".gz"):
        return gzip.open(path + ".gz", "rb")
    raise FileNotFoundError(path)


def read_idx(path, expected_magic):
    """Read one IDX file into a uint8 array shaped by its header."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: no header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFile(f"{path}: header cut short")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_len])
    count = int(np.prod(dims))
    if len(raw) < header_len + count:
        raise TruncatedFile(f"{path}: expected {count} data bytes, found {len(raw) - header_len}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_len).reshape(dims)


def _mnist_pair(directory, images_name, labels_name):
    images = read_idx(os.path.join(directory, images_name), IDX_IMAGES_MAGIC)
    labels = read_idx(os.path.join(directory, labels_name), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return DataShard(X, y, np.arange(y.size))


def load_mnist(directory):
    """Load (train, test) from the four standard IDX files (optionally .gz)."""
    train = _mnist_pair(directory, MNIST_FILES["train_images"], MNIST_FILES["train_labels"])
    test = _mnist_pair(directory, MNIST_FILES["test_images"], MNIST_FILES["test_labels"])
    return train, test


def write_idx(path, array):
    """Write a uint8 array as an IDX file (used by tests to fabricate fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        f.write(array.tobytes())


# ------------------------------------------------------------------ synthetic

def synth_classification(num_classes, input_dim, n, seed):
    """Gaussian blobs around class means on a radius-3 sphere; 80/20 split."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E7]))
    means = rng.standard_normal((num_classes, input_dim))
    means *= 3.0 / np.linalg.norm(means, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % num_classes)
    X = means[labels] + rng.standard_normal((n, input_dim))
    n_test = n // 5
    n_train = n - n_test
    train = DataShard(X[:n_train], labels[:n_train].astype(np.int64), np.arange(n_train))
    test = DataShard(X[n_train:], labels[n_train:].astype(np.int64), np.arange(n_test))
    return train, test


_SYNTH_HEADER = struct.Struct("<III")


def write_shard(path, shard, num_classes):
    """Binary container: <u32 n, u32 dim, u32 classes>, f32 LE rows, u8 labels."""
    X = np.asarray(shard.features, dtype="<f4")
    n, dim = X.shape
    with open(path, "wb") as f:
        f.write(_SYNTH_HEADER.pack(n, dim, num_classes))
        f.write(X.tobytes(order="C"))
        f.write(np.asarray(shard.labels, dtype=np.uint8).tobytes())


def read_shard(path):
    """Inverse of write_shard; returns (shard, num_classes)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _SYNTH_HEADER.size:
        raise TruncatedFile(f"{path}: no header")
    n, dim, classes = _SYNTH_HEADER.unpack_from(raw)
    need = _SYNTH_HEADER.size + 4 * n * dim + n
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(raw)}")
    X = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=_SYNTH_HEADER.size)
    y = np.frombuffer(raw, dtype=np.uint8, count=n, offset=_SYNTH_HEADER.size + 4 * n * dim)
    if n and y.max() >= classes:
        raise DimensionMismatch(f"label {y.max()} >= declared class count {classes}")
    shard = DataShard(X.reshape(n, dim).astype(np.float64), y.astype(np.int64), np.arange(n))
    return shard, classes


# --------------------------------------------------------------------- splits

def _rng(plan, tag):
    return np.random.default_rng(np.random.SeedSequence([int(plan.seed), tag]))


def _check_scheme(plan, scheme):
    if plan.scheme != scheme:
        raise ValueError(f"plan scheme {plan.scheme!r} used with the {scheme} split")


def split_uniform(train, plan):
    _check_scheme(plan, "uniform")
    if plan.total_examples > len(train):
        raise InsufficientData(f"need {plan.total_examples} examples, have {len(train)}")
    chosen = _rng(plan, 0x0111).permutation(len(train))[:plan.total_examples]
    return [train.subset(chosen[i::plan.num_participants]) for i in range(plan.num_participants)]


def powerlaw_sizes(total, n, ratio=POWERLAW_RATIO):
    """Sizes c * i**a for i = 1..n with size_n / size_1 == ratio, summing to total."""
    a = math.log(ratio) / math.log(n)
    raw = np.arange(1, n + 1, dtype=np.float64) ** a
    sizes = np.round(raw * total / raw.sum()).astype(np.int64)
    sizes[-1] += total - sizes.sum()
    return sizes


def split_powerlaw(train, plan, min_size=1):
    _check_scheme(plan, "powerlaw")
    if plan.total_examples > len(train):
        raise InsufficientData(f"need {plan.total_examples} examples, have {len(train)}")
    sizes = powerlaw_sizes(plan.total_examples, plan.num_participants)
    if sizes.min() < min_size:
        raise DegeneratePlan(f"smallest shard has {sizes.min()} examples, below {min_size}")
    if np.any(np.diff(sizes) <= 0):
        raise DegeneratePlan(f"sizes {sizes.tolist()} are not strictly increasing")
    chosen = _rng(plan, 0x0222).permutation(len(train))[:plan.total_examples]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [train.subset(chosen[bounds[i]:bounds[i + 1]]) for i in range(plan.num_participants)]


def classimbalance_counts(num_classes, n):
    """Distinct classes per participant: linspace(1, C, n) truncated to integers."""
    return np.linspace(1, num_classes, n).astype(np.int64)


def split_classimbalance(train, plan, num_classes=None):
    _check_scheme(plan, "classimbalance")
    labels = np.asarray(train.labels)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    n = plan.num_participants
    if plan.total_examples % n:
        raise DegeneratePlan(f"{plan.total_examples} examples do not divide evenly among {n}")
    size = plan.total_examples // n
    counts = classimbalance_counts(num_classes, n)
    rng = _rng(plan, 0x0333)
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in range(num_classes)}
    cursor = {c: 0 for c in range(num_classes)}
    shards = []
    for k in counts:
        per_class = np.full(k, size // k)
        per_class[:size % k] += 1
        picked = []
        for c, need in zip(range(k), per_class):
            start = cursor[c]
            if start + need > len(pools[c]):
                raise InsufficientData(f"class {c} exhausted ({len(pools[c])} available)")
            picked.extend(pools[c][start:start + need])
            cursor[c] = start + need
        shards.append(train.subset(np.array(sorted(picked), dtype=np.int64)))
    return shards


def split(train, plan, min_size=1, num_classes=None):
    if plan.scheme == "uniform":
        return split_uniform(train, plan)
    if plan.scheme == "powerlaw":
        return split_powerlaw(train, plan, min_size=min_size)
    return split_classimbalance(train, plan, num_classes=num_classes)


def remaining_indices(train, shards):
    """Source positions of `train` not used by any shard, in ascending order."""
    used = np.zeros(len(train), dtype=bool)
    for s in shards:
        used[s.source_index] = True
    return np.flatnonzero(~used)
