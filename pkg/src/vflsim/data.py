"""Dataset generation, IDX loading, feature partitioning, and task reassignment."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray  # N x d
    labels: np.ndarray    # N, int class indices
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise DataError("features must be N x d and labels a vector")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError("feature/label row counts differ")
        if self.labels.size == 0:
            raise DataError("empty dataset")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DataError(f"labels outside [0, {self.n_classes})")
        present = np.unique(self.labels)
        if present.size != self.n_classes:
            raise DataError("every class must be present at least once")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass
class PartitionedDataset:
    base: Dataset
    party_columns: list  # K disjoint sorted column-index arrays

    def __post_init__(self):
        cols = np.concatenate(self.party_columns)
        if sorted(cols.tolist()) != list(range(self.base.d)):
            raise ConfigError("party columns must partition the feature columns")
        if any(len(c) == 0 for c in self.party_columns):
            raise ConfigError("every party needs at least one column")

    @property
    def n_parties(self) -> int:
        return len(self.party_columns)

    def party_features(self, k: int) -> np.ndarray:
        return self.base.features[:, self.party_columns[k]]

    def widths(self) -> list:
        return [len(c) for c in self.party_columns]


@dataclass(frozen=True)
class TaskSpec:
    """Surjective relabeling old-class -> new-class."""
    name: str
    mapping: tuple  # length c_orig, values in [0, c_new)
    c_orig: int
    c_new: int

    def __post_init__(self):
        if len(self.mapping) != self.c_orig:
            raise ConfigError("mapping must cover every original class")
        if self.c_new > self.c_orig or self.c_new < 1:
            raise ConfigError("new class count must be in [1, c_orig]")
        hit = set(self.mapping)
        if hit != set(range(self.c_new)):
            raise ConfigError("mapping must be surjective onto [0, c_new)")


def gen_synthetic(n: int, d: int, n_classes: int, separation: float, seed: int) -> Dataset:
    """Gaussian blobs: class c is drawn around separation * (random unit direction).

    Balanced counts with remainder going to the lower class indices;
    deterministic under (args, seed).
    """
    if n < n_classes or d < n_classes:
        raise ConfigError(f"need n >= {n_classes} and d >= {n_classes}")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = separation * dirs
    base, rem = divmod(n, n_classes)
    counts = [base + (1 if c < rem else 0) for c in range(n_classes)]
    feats = []
    labels = []
    for c, cnt in enumerate(counts):
        feats.append(centers[c] + rng.normal(size=(cnt, d)))
        labels.append(np.full(cnt, c, dtype=np.int64))
    return Dataset(np.vstack(feats), np.concatenate(labels), n_classes)


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(">i", buf, offset)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image/label files into a flattened, [0,1]-scaled Dataset."""
    try:
        with open(images_path, "rb") as f:
            img = f.read()
        with open(labels_path, "rb") as f:
            lab = f.read()
    except OSError as e:
        raise FormatError(f"cannot read IDX file: {e}") from e

    magic = _read_be32(img, 0, str(images_path))
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x} at offset 0")
    n_img = _read_be32(img, 4, str(images_path))
    rows = _read_be32(img, 8, str(images_path))
    cols = _read_be32(img, 12, str(images_path))
    expect = 16 + n_img * rows * cols
    if len(img) < expect:
        raise FormatError(f"{images_path}: truncated pixel data at offset {len(img)} (need {expect})")

    magic = _read_be32(lab, 0, str(labels_path))
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x} at offset 0")
    n_lab = _read_be32(lab, 4, str(labels_path))
    if n_lab != n_img:
        raise FormatError(f"{labels_path}: {n_lab} labels for {n_img} images (offset 4)")
    if len(lab) < 8 + n_lab:
        raise FormatError(f"{labels_path}: truncated label data at offset {len(lab)}")

    pixels = np.frombuffer(img, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    features = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    return Dataset(features, labels, int(labels.max()) + 1)


def partition_features(d: int, k: int, seed: int) -> list:
    """Seeded shuffle of the columns split into k near-equal chunks.

    Larger chunks go to the lower party indices; each chunk is returned
    sorted, as a canonical column-index set.
    """
    if k < 1 or d < k:
        raise ConfigError(f"need 1 <= k <= d, got k={k}, d={d}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d)
    base, rem = divmod(d, k)
    out = []
    start = 0
    for p in range(k):
        size = base + (1 if p < rem else 0)
        out.append(np.sort(perm[start:start + size]))
        start += size
    return out


def reassign_task(labels: np.ndarray, spec: TaskSpec) -> np.ndarray:
    """Apply the old-class -> new-class mapping element-wise."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= spec.c_orig):
        raise DataError(f"label outside [0, {spec.c_orig})")
    table = np.asarray(spec.mapping, dtype=np.int64)
    return table[labels]


def _block_mapping(c_orig: int, c_new: int) -> tuple:
    # near-balanced consecutive blocks via floor scaling
    return tuple(o * c_new // c_orig for o in range(c_orig))


def builtin_task_specs(kind: str, n_classes: int = 10) -> list:
    """Built-in reassignment chains with progressively fewer label categories.

    "mnist-like-10": identity, consecutive pairs (5), near-balanced groups (4),
    parity (2). "generic-C": identity followed by a halving chain of
    near-balanced consecutive blocks down to 2 classes.
    """
    if kind == "mnist-like-10":
        c = 10
        specs = [
            TaskSpec("original", tuple(range(c)), c, c),
            TaskSpec("pairs5", tuple(o // 2 for o in range(c)), c, 5),
            TaskSpec("groups4", _block_mapping(c, 4), c, 4),
            TaskSpec("parity2", tuple(o % 2 for o in range(c)), c, 2),
        ]
        return specs
    if kind == "generic-C":
        c = n_classes
        if c < 2:
            raise ConfigError("generic chain needs >= 2 classes")
        specs = [TaskSpec("original", tuple(range(c)), c, c)]
        cur = c
        while cur > 2:
            cur = (cur + 1) // 2
            specs.append(TaskSpec(f"groups{cur}", _block_mapping(c, cur), c, cur))
        return specs
    raise ConfigError(f"unknown task kind {kind!r}")
