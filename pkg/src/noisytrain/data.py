"""Synthetic labeled datasets, label-noise injection, augmentation, batching.

All randomness flows from explicit integer seeds through
``numpy.random.default_rng``; there is no global RNG state anywhere.
True labels are carried alongside the (possibly corrupted) given labels
but are only ever read by evaluation code.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .kernel import Matrix

# substream tags, kept distinct so derived generators never collide
_STREAM_MEANS = 101
_STREAM_SAMPLES = 102
_STREAM_SYM_NOISE = 201
_STREAM_ASYM_NOISE = 202
_STREAM_BATCHES = 301


def round_half_up(x: float) -> int:
    """round() with deterministic .5-up behavior (no banker's rounding)."""
    return int(math.floor(x + 0.5))


@dataclass
class LabeledDataset:
    """Features plus true and given class labels.

    ``true_labels`` exist for evaluation only; training code must treat
    ``given_labels`` as the only available annotation.
    """

    features: Matrix
    true_labels: np.ndarray
    given_labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.given_labels = np.asarray(self.given_labels, dtype=np.int64)
        n = self.features.rows
        if len(self.true_labels) != n or len(self.given_labels) != n:
            raise ValueError("label arrays must have one entry per feature row")
        for name, labels in (("true", self.true_labels), ("given", self.given_labels)):
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValueError(f"{name} labels out of range [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.rows

    @property
    def dims(self) -> int:
        return self.features.cols

    def clone(self) -> "LabeledDataset":
        return LabeledDataset(
            features=self.features.copy(),
            true_labels=self.true_labels.copy(),
            given_labels=self.given_labels.copy(),
            num_classes=self.num_classes,
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Label corruption model: symmetric redistribution or structured flips."""

    kind: str
    rate: float
    seed: int
    flip_map: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise ValueError(f"noise kind must be symmetric|asymmetric, got {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"noise rate must be in [0, 1], got {self.rate}")
        if self.kind == "asymmetric" and self.flip_map is None:
            raise ValueError("asymmetric noise requires a flip_map")


def next_class_flip_map(num_classes: int) -> tuple[int, ...]:
    """The default asymmetric structure: class c flips to (c+1) mod C."""
    return tuple((c + 1) % num_classes for c in range(num_classes))


def validate_flip_map(flip_map, num_classes: int) -> tuple[int, ...]:
    fm = tuple(int(t) for t in flip_map)
    if len(fm) != num_classes:
        raise ValueError(f"flip_map must have {num_classes} entries, got {len(fm)}")
    for c, t in enumerate(fm):
        if not 0 <= t < num_classes:
            raise ValueError(f"flip_map target {t} out of range for class {c}")
        if t == c:
            raise ValueError(f"flip_map maps class {c} to itself")
    return fm


@dataclass(frozen=True)
class AugmentationSpec:
    """Weak = Gaussian jitter; strong = larger jitter plus coordinate dropout."""

    weak_sigma: float = 0.1
    strong_sigma: float = 0.5
    strong_dropout_prob: float = 0.2

    def __post_init__(self):
        if self.weak_sigma < 0:
            raise ValueError("weak_sigma must be >= 0")
        if self.strong_sigma < self.weak_sigma:
            raise ValueError("strong_sigma must be >= weak_sigma")
        if not 0.0 <= self.strong_dropout_prob < 1.0:
            raise ValueError("strong_dropout_prob must be in [0, 1)")


def make_gaussian_blobs(num_classes: int, per_class: int, dims: int,
                        separation: float, seed: int) -> LabeledDataset:
    """Isotropic Gaussian class blobs with mutual mean distance >= separation.

    Samples are grouped by class (class 0 first).  Given labels start out
    identical to the true labels; corruption is a separate step.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("need at least 1 sample per class")
    if dims < 2:
        raise ValueError("need at least 2 feature dimensions")
    if separation <= 0:
        raise ValueError("separation must be > 0")

    rng_means = np.random.default_rng([seed, _STREAM_MEANS])
    means = rng_means.standard_normal((num_classes, dims))
    dists = np.sqrt(((means[:, None, :] - means[None, :, :]) ** 2).sum(axis=2))
    min_dist = dists[np.triu_indices(num_classes, k=1)].min()
    if min_dist == 0.0:
        raise ValueError("degenerate mean placement; pick a different seed")
    means = means * (separation / min_dist)

    rng_samples = np.random.default_rng([seed, _STREAM_SAMPLES])
    blocks = [means[c] + rng_samples.standard_normal((per_class, dims)) for c in range(num_classes)]
    features = Matrix(np.vstack(blocks))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    return LabeledDataset(features, labels, labels.copy(), num_classes)


def inject_symmetric_noise(ds: LabeledDataset, rate: float, seed: int) -> LabeledDataset:
    """Corrupt exactly round(rate * N_c) samples per class.

    Replacement labels are drawn uniformly from the other C-1 classes;
    a corrupted sample never keeps its own class.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"noise rate must be in [0, 1], got {rate}")
    out = ds.clone()
    C = ds.num_classes
    for c in range(C):
        members = np.flatnonzero(ds.true_labels == c)
        k = round_half_up(rate * len(members))
        if k == 0:
            continue
        rng = np.random.default_rng([seed, _STREAM_SYM_NOISE, c])
        picked = rng.choice(members, size=k, replace=False)
        draws = rng.integers(0, C - 1, size=k)
        out.given_labels[picked] = draws + (draws >= c)
    return out


def inject_asymmetric_noise(ds: LabeledDataset, rate: float, flip_map, seed: int) -> LabeledDataset:
    """Corrupt exactly round(rate * N_c) samples per class to flip_map[c]."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"noise rate must be in [0, 1], got {rate}")
    fm = validate_flip_map(flip_map, ds.num_classes)
    out = ds.clone()
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.true_labels == c)
        k = round_half_up(rate * len(members))
        if k == 0:
            continue
        rng = np.random.default_rng([seed, _STREAM_ASYM_NOISE, c])
        picked = rng.choice(members, size=k, replace=False)
        out.given_labels[picked] = fm[c]
    return out


def apply_noise(ds: LabeledDataset, spec: NoiseSpec) -> LabeledDataset:
    if spec.kind == "symmetric":
        return inject_symmetric_noise(ds, spec.rate, spec.seed)
    return inject_asymmetric_noise(ds, spec.rate, spec.flip_map, spec.seed)


def weak_augment(x: Matrix, spec: AugmentationSpec, rng: np.random.Generator) -> Matrix:
    """Additive Gaussian jitter (row-wise independent draws)."""
    noise = rng.normal(0.0, spec.weak_sigma, size=x.shape) if spec.weak_sigma > 0 else 0.0
    return Matrix(x.data + noise)


def strong_augment(x: Matrix, spec: AugmentationSpec, rng: np.random.Generator) -> Matrix:
    """Larger jitter, then each coordinate independently zeroed."""
    y = x.data.copy()
    if spec.strong_sigma > 0:
        y = y + rng.normal(0.0, spec.strong_sigma, size=x.shape)
    if spec.strong_dropout_prob > 0:
        keep = rng.random(x.shape) >= spec.strong_dropout_prob
        y = y * keep
    return Matrix(y)


def batch_iterator(indices, batch_size: int, seed, epoch: int) -> list[np.ndarray]:
    """Seeded shuffle keyed by (seed, epoch), split into batches.

    ``seed`` may be an int or a tuple of ints (independent substreams are
    obtained by passing distinct tuples).  The final short batch is kept.
    An empty index set yields an empty list; callers decide how to degrade.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return []
    parts = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    rng = np.random.default_rng([*parts, _STREAM_BATCHES, epoch])
    perm = rng.permutation(idx)
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


# ---------------------------------------------------------------------------
# CSV snapshot: feat_0..feat_{D-1},true_label,given_label


def save_dataset_csv(ds: LabeledDataset, path: str) -> None:
    """Write the snapshot atomically; float repr round-trips exactly."""
    header = [f"feat_{j}" for j in range(ds.dims)] + ["true_label", "given_label"]
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        feats = ds.features.data
        for i in range(len(ds)):
            row = [repr(float(v)) for v in feats[i]]
            row.append(str(int(ds.true_labels[i])))
            row.append(str(int(ds.given_labels[i])))
            w.writerow(row)
    os.replace(tmp, path)


def load_dataset_csv(path: str, num_classes: int | None = None) -> LabeledDataset:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if len(header) < 3 or header[-2:] != ["true_label", "given_label"]:
            raise ValueError(f"unrecognized dataset header in {path}")
        dims = len(header) - 2
        feats, true_l, given_l = [], [], []
        for row in r:
            feats.append([float(v) for v in row[:dims]])
            true_l.append(int(row[dims]))
            given_l.append(int(row[dims + 1]))
    true_arr = np.array(true_l, dtype=np.int64)
    given_arr = np.array(given_l, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(true_arr.max(), given_arr.max())) + 1
    return LabeledDataset(Matrix(np.array(feats)), true_arr, given_arr, num_classes)
