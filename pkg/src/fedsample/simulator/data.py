"""Datasets and non-iid partitioning across the fleet."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedsample.errors import ConfigError
from fedsample.system import SystemModel


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def label_proportions(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes) / max(len(self), 1)


def concat(parts: list[Dataset]) -> Dataset:
    return Dataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        parts[0].num_classes,
    )


def make_synthetic(n_samples: int, n_features: int, n_classes: int, class_sep: float = 1.0,
                   seed: int = 0) -> Dataset:
    """Gaussian blobs: class means ~ N(0, class_sep^2 I), unit-variance noise."""
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, class_sep, size=(n_classes, n_features))
    labels = rng.integers(0, n_classes, size=n_samples)
    features = means[labels] + rng.normal(size=(n_samples, n_features))
    return Dataset(features, labels, n_classes)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08:
        raise ConfigError(f"{path}: not an unsigned-byte IDX file")
    shape = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(shape)


def load_idx(images: str | Path, labels: str | Path, limit: int | None = None) -> Dataset:
    """Load an image dataset stored as IDX files (the MNIST layout).

    Pixels are flattened and scaled to [0, 1].
    """
    x = _read_idx(Path(images)).astype(float) / 255.0
    y = _read_idx(Path(labels)).astype(int)
    x = x.reshape(len(x), -1)
    if limit is not None:
        x, y = x[:limit], y[:limit]
    return Dataset(x, y, int(y.max()) + 1)


def _largest_remainder(total: int, weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights`` (sum preserved)."""
    w = np.asarray(weights, dtype=float)
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(int)
    short = total - counts.sum()
    if short:
        # random jitter breaks ties deterministically for a given rng
        frac = exact - counts + rng.uniform(0, 1e-9, size=len(w))
        frac[w <= 0] = -np.inf
        counts[np.argsort(-frac, kind="stable")[:short]] += 1
    return counts


def client_sizes(model: SystemModel, total: int) -> np.ndarray:
    """Per-client sample counts proportional to ``data_size``, summing to ``total``."""
    sizes = model.data_sizes
    if total == sizes.sum():
        return sizes.copy()
    counts = _largest_remainder(total, sizes, np.random.default_rng(0))
    if np.any(counts < 1):
        # give every client one sample first, split the rest proportionally
        counts = 1 + _largest_remainder(total - model.n, sizes, np.random.default_rng(0))
    return counts


def partition_dirichlet(data: Dataset, model: SystemModel, concentration: float,
                        seed: int = 0) -> list[Dataset]:
    """Split ``data`` across the fleet with Dirichlet label skew.

    Client ``n`` gets a label mix ``p_n ~ Dir(concentration * K * pi)`` where
    ``pi`` is the global label distribution (so it is the symmetric
    ``Dir(concentration)`` on balanced data), and a sample count proportional
    to its ``data_size``. Counts are rounded to integers per client; when a
    class runs out the remainder is drawn from the classes still available.
    Every sample is assigned exactly once.
    """
    if concentration <= 0:
        raise ConfigError("concentration must be > 0")
    if len(data) < model.n:
        raise ConfigError(f"{len(data)} samples cannot cover {model.n} clients")
    rng = np.random.default_rng(seed)
    k = data.num_classes
    sizes = client_sizes(model, len(data))
    available = np.bincount(data.labels, minlength=k)
    pi = available / available.sum()
    prior = np.maximum(concentration * k * pi, 1e-300)
    pools = [rng.permutation(np.flatnonzero(data.labels == c)).tolist() for c in range(k)]

    counts = np.zeros((model.n, k), dtype=int)
    for n in rng.permutation(model.n):
        mix = rng.dirichlet(prior)
        need = int(sizes[n])
        while need > 0:
            w = mix * (available > 0)
            if w.sum() <= 0:
                w = (available > 0).astype(float)
            want = _largest_remainder(need, w, rng)
            take = np.minimum(want, available)
            counts[n] += take
            available = available - take
            need -= int(take.sum())

    parts = []
    for n in range(model.n):
        idx = []
        for c in range(k):
            idx.extend(pools[c][:counts[n, c]])
            del pools[c][:counts[n, c]]
        parts.append(data.subset(np.array(sorted(idx), dtype=int)))
    return parts
