"""Synthetic data, Dirichlet client partitioning, sampling, and CSV I/O.

Randomness discipline: every operation takes an RngStream and derives its
own purpose-tagged child, so results depend only on (root_seed, purpose)
and never on call order:

    make_blobs          root -> [DATA_TAG]
    dirichlet_partition root -> [PARTITION_TAG]
    sample_clients      root -> [round, CLIENT_SAMPLE_TAG]
    next_batch          round-scoped stream -> [client_id, step]
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError
from .models import Batch
from .numkit import (
    CLIENT_SAMPLE_TAG,
    DATA_TAG,
    PARTITION_TAG,
    RngStream,
)


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class Dataset:
    """An immutable labelled corpus (features float64, labels int64)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split_tag: Split = Split.TRAIN

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(
                f"features {X.shape} and labels {y.shape} do not align"
            )
        if X.shape[0] == 0:
            raise ValueError("empty dataset")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(
                f"labels must lie in [0, {self.n_classes}); "
                f"found [{y.min()}, {y.max()}]"
            )
        if self.split_tag is Split.TRAIN:
            present = np.unique(y)
            if present.size != self.n_classes:
                missing = sorted(set(range(self.n_classes)) - set(present.tolist()))
                raise ValueError(f"TRAIN split is missing classes {missing}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def batch_at(self, indices: np.ndarray) -> Batch:
        return Batch(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class ClientShard:
    """One client's slice of the TRAIN set plus its sampled class mix."""

    client_id: int
    indices: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64))
        p = np.asarray(self.p, dtype=np.float64)
        if idx.size == 0:
            raise ValueError(f"client {self.client_id}: empty shard")
        if p.ndim != 1 or np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(
                f"client {self.client_id}: p is not a probability vector"
            )
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "p", p)

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class Partition:
    """All client shards; verified to cover the TRAIN set exactly once."""

    shards: tuple[ClientShard, ...]
    alpha: float
    n_train: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "shards", tuple(self.shards))
        seen = np.concatenate([s.indices for s in self.shards])
        if seen.size != self.n_train or not np.array_equal(
            np.sort(seen), np.arange(self.n_train)
        ):
            raise ValueError(
                "shards do not form a disjoint cover of the TRAIN index set"
            )

    @property
    def n_clients(self) -> int:
        return len(self.shards)


def make_blobs(
    C: int,
    per_class: int,
    d_in: int,
    separation: float,
    noise: float,
    rng: RngStream,
) -> tuple[Dataset, Dataset]:
    """Gaussian blob classification data: (train, test).

    Class means are drawn on the sphere of radius `separation`; points are
    means plus isotropic Gaussian noise of std `noise`.  The TEST split has
    ceil(0.2 * C * per_class) points with labels assigned round-robin (so
    its class mix matches TRAIN as closely as an integer count allows).
    """
    if C < 2 or per_class < 1 or d_in < 1:
        raise ValueError(
            f"need C >= 2, per_class >= 1, d_in >= 1; got {C}, {per_class}, {d_in}"
        )
    if separation <= 0 or noise <= 0:
        raise ValueError("separation and noise must be positive")
    gen = rng.child(DATA_TAG).generator()
    means = gen.normal(size=(C, d_in))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    train_labels = np.repeat(np.arange(C, dtype=np.int64), per_class)
    train_X = means[train_labels] + noise * gen.normal(size=(C * per_class, d_in))

    n_test = math.ceil(0.2 * C * per_class)
    test_labels = np.arange(n_test, dtype=np.int64) % C
    test_X = means[test_labels] + noise * gen.normal(size=(n_test, d_in))

    train = Dataset(train_X, train_labels, C, Split.TRAIN)
    test = Dataset(test_X, test_labels, C, Split.TEST)
    return train, test


def _dirichlet_rows(M: int, C: int, alpha: float, gen: np.random.Generator) -> np.ndarray:
    """M simplex points via normalized Gamma(alpha, 1) draws (resampling the
    astronomically-unlikely all-zero row)."""
    p = np.empty((M, C))
    for i in range(M):
        while True:
            g = gen.gamma(alpha, 1.0, size=C)
            s = g.sum()
            if s > 0.0:
                p[i] = g / s
                break
    return p


def dirichlet_partition(
    dataset: Dataset, M: int, alpha: float, rng: RngStream
) -> Partition:
    """Split TRAIN indices across M clients by per-class proportional
    allocation against sampled Dirichlet class mixes.

    For each class, client quotas are the normalized column of p weights
    times the class count, rounded by largest remainder (ties to the lower
    client id).  Clients left empty steal one sample from the largest shard
    until every shard is nonempty.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if M > dataset.size:
        raise ValueError(
            f"cannot split {dataset.size} samples across M={M} clients"
        )
    C = dataset.n_classes
    gen = rng.child(PARTITION_TAG).generator()
    p = _dirichlet_rows(M, C, alpha, gen)

    owned: list[list[np.ndarray]] = [[] for _ in range(M)]
    for c in range(C):
        class_idx = np.flatnonzero(dataset.labels == c)
        col = p[:, c]
        s = col.sum()
        shares = col / s if s > 0 else np.full(M, 1.0 / M)
        quota = shares * class_idx.size
        base = np.floor(quota).astype(np.int64)
        leftover = int(class_idx.size - base.sum())
        if leftover:
            order = sorted(range(M), key=lambda i: (-(quota[i] - base[i]), i))
            for i in order[:leftover]:
                base[i] += 1
        stop = np.cumsum(base)
        start = stop - base
        for i in range(M):
            owned[i].append(class_idx[start[i] : stop[i]])

    piles = [
        np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        for chunks in owned
    ]
    # Repair: every client must be able to produce an update.
    while True:
        empties = [i for i in range(M) if piles[i].size == 0]
        if not empties:
            break
        sizes = [p_.size for p_ in piles]
        donor = min(range(M), key=lambda i: (-sizes[i], i))
        taker = empties[0]
        piles[taker] = piles[donor][-1:]
        piles[donor] = piles[donor][:-1]

    shards = tuple(
        ClientShard(i, np.sort(piles[i]), p[i]) for i in range(M)
    )
    return Partition(shards, alpha, dataset.size)


def tv_to_uniform(p: np.ndarray) -> np.ndarray:
    """Total-variation distance of each simplex row to the uniform mix."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    u = 1.0 / p.shape[1]
    return 0.5 * np.abs(p - u).sum(axis=1)


def mean_tv_to_uniform(
    C: int, alpha: float, draws: int, rng: RngStream
) -> float:
    """Monte-Carlo mean TV(p, uniform) over `draws` Dirichlet(alpha) samples."""
    gen = rng.child(PARTITION_TAG).generator()
    p = _dirichlet_rows(draws, C, alpha, gen)
    return float(tv_to_uniform(p).mean())


def sample_clients(M: int, count: int, round_index: int, rng: RngStream) -> list[int]:
    """Uniform without-replacement draw of `count` client ids, sorted ascending."""
    if not 1 <= count <= M:
        raise ValueError(f"need 1 <= count <= M; got count={count}, M={M}")
    gen = rng.child(round_index, CLIENT_SAMPLE_TAG).generator()
    ids = gen.choice(M, size=count, replace=False)
    return sorted(int(i) for i in ids)


def next_batch(
    shard: ClientShard,
    dataset: Dataset,
    batch_size: int,
    rng: RngStream,
    step: int,
) -> Batch:
    """Draw a constant-size batch uniformly with replacement from the shard.

    `rng` is the round-scoped stream; the draw is keyed by (client_id, step)
    so clients and steps are independent and replayable.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    gen = rng.child(shard.client_id, step).generator()
    picks = gen.integers(0, shard.size, size=batch_size)
    return dataset.batch_at(shard.indices[picks])


def load_csv(path: str) -> Dataset:
    """Read `f0,...,f{d-1},label` rows into a TRAIN Dataset.

    Labels must be the contiguous set {0, ..., C-1}; malformed rows are
    rejected with their line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if d < 1 or header != expected:
            raise ConfigError(
                f"{path}: header must be f0,...,f{{d-1}},label; got {header}"
            )
        feats: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ConfigError(
                    f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}"
                )
            try:
                feats.append([float(v) for v in row[:d]])
                labels.append(int(row[d]))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not labels:
        raise ConfigError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0:
        raise ConfigError(f"{path}: negative label {y.min()}")
    C = int(y.max()) + 1
    present = set(np.unique(y).tolist())
    if present != set(range(C)):
        raise ConfigError(
            f"{path}: labels are not contiguous 0..{C - 1}; "
            f"missing {sorted(set(range(C)) - present)}"
        )
    return Dataset(np.asarray(feats), y, C, Split.TRAIN)


def save_csv(dataset: Dataset, path: str) -> None:
    """Write a Dataset in the load_csv format (full float precision)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.d_in)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
