"""Datasets: Gaussian-mixture synthesis, IDX and CSV ingestion, seeded batching."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, FormatError, ParameterError
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
NOISE_MODES = ("cluster", "uniform")


@dataclass
class Shard:
    """Teacher-training data: features plus (possibly corrupted) labels."""

    features: np.ndarray
    labels: np.ndarray
    clean_labels: np.ndarray
    noise_rate: float


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    class_count: int
    shards: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ParameterError(f"{n} feature rows but {self.labels.shape[0]} labels")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ParameterError(f"labels must lie in [0, {self.class_count})")
        both = np.concatenate([self.train_idx, self.test_idx])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ParameterError("train/test splits must be disjoint and cover every sample")

    @property
    def dim(self):
        return self.features.shape[1]

    def split(self, name):
        idx = {"train": self.train_idx, "test": self.test_idx}[name]
        return self.features[idx], self.labels[idx]


@dataclass
class SyntheticSpec:
    classes: int = 4
    dim: int = 16
    clusters_per_class: int = 3
    spread: float = 1.0
    center_scale: float = 1.0
    samples_per_class: int = 250
    test_fraction: float = 0.8
    shard_samples_per_class: int = 400
    noise_rates: tuple = (0.0, 0.1, 0.2, 0.4)
    noise_mode: str = "cluster"
    region_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.noise_rates = tuple(float(r) for r in self.noise_rates)
        for name in ("classes", "dim", "clusters_per_class", "samples_per_class", "shard_samples_per_class"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.spread < 0:
            raise ParameterError("spread must be non-negative")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ParameterError("test_fraction must lie in [0, 1)")
        if not 0.0 <= self.region_bias < 1.0:
            raise ParameterError("region_bias must lie in [0, 1)")
        if self.noise_mode not in NOISE_MODES:
            raise ParameterError(f"noise_mode must be one of {NOISE_MODES}")
        for r in self.noise_rates:
            if not 0.0 <= r < 1.0:
                raise ParameterError(f"noise rate {r} outside [0, 1)")


def _corrupt_uniform(labels, rate, classes, rng):
    """Replace each label, with probability ``rate``, by a uniformly drawn *other* class."""
    if classes < 2:
        return labels.copy()
    flip = rng.random(labels.shape[0]) < rate
    shift = rng.integers(1, classes, size=labels.shape[0])
    return np.where(flip, (labels + shift) % classes, labels)


def _corrupt_clusters(labels, clusters, rate, classes, n_clusters, rng):
    """Region-structured noise: ``ceil(rate * n_clusters)`` clusters are picked
    and each of their labels is moved, with probability
    ``rate * n_clusters / picked``, to one fixed wrong class per cluster.

    The expected corrupted fraction is ``rate`` (for equally weighted
    clusters), but the errors are systematic, so a teacher fitting them is
    confidently wrong on those regions rather than merely uncertain.
    """
    if classes < 2 or rate == 0.0:
        return labels.copy()
    k = min(n_clusters, int(np.ceil(rate * n_clusters - 1e-9)))
    picked = rng.choice(n_clusters, size=k, replace=False)
    p = min(1.0, rate * n_clusters / k)
    target = {int(c): int(rng.integers(1, classes)) for c in picked}
    out = labels.copy()
    u = rng.random(labels.shape[0])
    for c, shift in target.items():
        hit = (clusters == c) & (u < p)
        out[hit] = (labels[hit] + shift) % classes
    return out


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Gaussian mixture with ``clusters_per_class`` isotropic blobs per class.

    The returned dataset holds ``samples_per_class`` points of every class,
    split into train/test, and one shard per entry of ``spec.noise_rates``
    (corrupted per ``spec.noise_mode``). With ``region_bias > 0`` shard ``m``
    draws a ``region_bias`` share of its points from its "home" clusters
    (global cluster id ``% M == m``), so teachers see different parts of the
    input space most densely.
    """
    C, K, d = spec.classes, spec.clusters_per_class, spec.dim
    centers = stream(spec.seed, "centers").normal(0.0, spec.center_scale, size=(C * K, d))
    cluster_class = np.repeat(np.arange(C), K)

    def draw(rng, n_per_class, weights=None):
        feats, labels, picks = [], [], []
        for c in range(C):
            ids = np.arange(c * K, (c + 1) * K)
            p = None if weights is None else weights[ids] / weights[ids].sum()
            pick = rng.choice(ids, size=n_per_class, p=p)
            feats.append(centers[pick] + spec.spread * rng.normal(size=(n_per_class, d)))
            labels.append(cluster_class[pick])
            picks.append(pick)
        return np.concatenate(feats), np.concatenate(labels), np.concatenate(picks)

    features, labels, _ = draw(stream(spec.seed, "samples"), spec.samples_per_class)
    n = features.shape[0]
    perm = stream(spec.seed, "split").permutation(n)
    n_test = int(round(spec.test_fraction * n))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])

    M = len(spec.noise_rates)
    shards = []
    for m, rate in enumerate(spec.noise_rates):
        home = (np.arange(C * K) % max(M, 1)) == m
        weights = None
        if spec.region_bias > 0 and M > 1:
            # home clusters of a class jointly get region_bias of the mass (when any exist)
            weights = np.ones(C * K)
            for c in range(C):
                ids = np.arange(c * K, (c + 1) * K)
                h = home[ids]
                if h.any() and not h.all():
                    weights[ids[h]] = spec.region_bias / h.sum()
                    weights[ids[~h]] = (1.0 - spec.region_bias) / (~h).sum()
        sx, sy, sc = draw(stream(spec.seed, f"shard-{m}"), spec.shard_samples_per_class, weights)
        noise_rng = stream(spec.seed, f"noise-{m}")
        if spec.noise_mode == "cluster":
            noisy = _corrupt_clusters(sy, sc, rate, C, C * K, noise_rng)
        else:
            noisy = _corrupt_uniform(sy, rate, C, noise_rng)
        shards.append(Shard(sx, noisy, sy, rate))
    return Dataset(features, labels, train_idx, test_idx, C, shards)


def standardize(ds: Dataset) -> Dataset:
    """Per-dimension z-score using train-split statistics (constant dims are only centered)."""
    train = ds.features[ds.train_idx] if ds.train_idx.size else ds.features
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0.0] = 1.0
    return Dataset((ds.features - mean) / std, ds.labels, ds.train_idx, ds.test_idx, ds.class_count, ds.shards)


def _split_indices(n, test_fraction, seed):
    if not 0.0 <= test_fraction < 1.0:
        raise ParameterError("test_fraction must lie in [0, 1)")
    perm = stream(seed, "split").permutation(n)
    n_test = int(round(test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx_images(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError("truncated IDX image header", offset=len(buf))
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}", offset=0)
    if len(buf) < 16:
        raise FormatError("truncated IDX image header", offset=len(buf))
    count, rows, cols = struct.unpack_from(">III", buf, 4)
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise FormatError(f"truncated IDX image payload: need {need} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > need:
        raise FormatError("trailing bytes after IDX image payload", offset=need)
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def parse_idx_labels(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError("truncated IDX label header", offset=len(buf))
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}", offset=0)
    if len(buf) < 8:
        raise FormatError("truncated IDX label header", offset=len(buf))
    (count,) = struct.unpack_from(">I", buf, 4)
    need = 8 + count
    if len(buf) < need:
        raise FormatError(f"truncated IDX label payload: need {need} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > need:
        raise FormatError("trailing bytes after IDX label payload", offset=need)
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_path, labels_path, *, class_count=None, test_fraction=0.0, seed=0, normalize=True) -> Dataset:
    """Load an IDX image/label pair (raw or gzipped). Pixels are scaled to [0, 1]."""
    images = parse_idx_images(_read_maybe_gzip(images_path))
    labels = parse_idx_labels(_read_maybe_gzip(labels_path))
    if images.shape[0] != labels.shape[0]:
        # offset 4 is the count field in both headers
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    if images.shape[0] == 0:
        raise EmptyDatasetError("IDX files contain no samples")
    C = int(class_count) if class_count is not None else int(labels.max()) + 1
    train_idx, test_idx = _split_indices(images.shape[0], test_fraction, seed)
    ds = Dataset(images, labels, train_idx, test_idx, C)
    return standardize(ds) if normalize else ds


def load_csv(path, label_column, *, class_count=None, test_fraction=0.0, seed=0, normalize=True) -> Dataset:
    """Rectangular numeric CSV with a header row; ``label_column`` holds integer classes."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ParameterError(f"label column {label_column!r} not in header {header}")
        li = header.index(label_column)
        feats, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"row has {len(row)} fields, header has {len(header)}", offset=line)
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise FormatError(f"non-numeric cell in row {row}", offset=line) from None
            lab = values[li]
            if lab != int(lab) or lab < 0:
                raise FormatError(f"label {row[li]!r} is not a non-negative integer", offset=line)
            labels.append(int(lab))
            feats.append(values[:li] + values[li + 1 :])
    if not labels:
        raise EmptyDatasetError(f"{path} has a header but no data rows")
    features = np.asarray(feats, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise FormatError("non-finite feature value")
    labels = np.asarray(labels, dtype=np.int64)
    C = int(class_count) if class_count is not None else int(labels.max()) + 1
    train_idx, test_idx = _split_indices(len(labels), test_fraction, seed)
    ds = Dataset(features, labels, train_idx, test_idx, C)
    return standardize(ds) if normalize else ds


def batches(indices, batch_size: int, seed: int, epoch: int) -> list:
    """Shuffle ``indices`` (a Dataset's train split or an index array) into batches.

    The permutation depends only on ``(seed, epoch)``; the last batch may be short.
    """
    if batch_size < 1:
        raise ParameterError("batch size must be at least 1")
    if isinstance(indices, Dataset):
        indices = indices.train_idx
    indices = np.asarray(indices, dtype=np.int64)
    order = indices[stream(seed, f"shuffle-{epoch}").permutation(indices.size)]
    return [order[i : i + batch_size] for i in range(0, order.size, batch_size)]
