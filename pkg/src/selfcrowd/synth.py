"""Synthetic class-imbalanced crowd-annotation datasets.

Ground-truth labels are drawn from configurable class priors, features
from per-class spherical unit-variance Gaussian clusters whose centroids
sit at the corners of a regular simplex (all pairwise centroid distances
equal ``cluster_separation``). Each simulated worker has a row-stochastic
confusion matrix with a per-worker diagonal accuracy and the residual
probability spread uniformly off the diagonal. Each training instance is
annotated by a few distinct, uniformly chosen workers.

Defaults mirror a small real crowd-labeling task: 8 classes, 59 workers,
worker accuracy 0.692 +/- 0.181, 2.547 annotations per instance, 1000
training and 1688 test instances, mildly skewed priors (per-class
proportion spread 1.85%).

Everything is drawn from a single seeded PCG64 stream in a fixed,
documented order, so a config (seed included) pins the dataset exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import CrowdDataset
from .errors import ConfigError

DEFAULT_PRIOR_SPREAD = 0.0185  # population std of per-class proportions


def default_class_priors(num_classes: int, spread: float = DEFAULT_PRIOR_SPREAD) -> tuple[float, ...]:
    """Mildly imbalanced priors: a linear ramp around 1/C with the given
    population standard deviation of proportions."""
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    ramp = np.linspace(-1.0, 1.0, num_classes)
    scale = spread / float(np.std(ramp))
    priors = 1.0 / num_classes + scale * ramp
    if (priors <= 0).any():
        raise ConfigError("prior spread too large for this class count")
    return tuple(float(p) for p in priors)


@dataclass(frozen=True)
class SynthConfig:
    """Generation settings; ``class_priors=None`` selects the default ramp."""

    num_classes: int = 8
    num_instances: int = 1000
    num_test_instances: int = 1688
    feature_dim: int = 16
    class_priors: tuple[float, ...] | None = None
    cluster_separation: float = 3.0
    num_workers: int = 59
    worker_accuracy_mean: float = 0.692
    worker_accuracy_std: float = 0.181
    annotations_per_instance_mean: float = 2.547
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.num_instances < 1 or self.num_test_instances < 1:
            raise ConfigError("num_instances and num_test_instances must be >= 1")
        if self.feature_dim < self.num_classes:
            raise ConfigError(
                "feature_dim must be >= num_classes (simplex centroid placement)"
            )
        if self.num_workers < 1:
            raise ConfigError("num_workers must be >= 1")
        if not 0.0 < self.worker_accuracy_mean <= 1.0:
            raise ConfigError("worker_accuracy_mean must be in (0, 1]")
        if self.worker_accuracy_std < 0.0:
            raise ConfigError("worker_accuracy_std must be >= 0")
        if self.cluster_separation <= 0.0:
            raise ConfigError("cluster_separation must be > 0")
        if self.annotations_per_instance_mean <= 0.0:
            raise ConfigError("annotations_per_instance_mean must be > 0")
        if self.annotations_per_instance_mean > self.num_workers:
            raise ConfigError(
                "annotations_per_instance_mean cannot exceed num_workers"
            )
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        priors = self.class_priors
        if priors is None:
            priors = default_class_priors(self.num_classes)
        else:
            priors = tuple(float(p) for p in priors)
            if len(priors) != self.num_classes:
                raise ConfigError(
                    f"class_priors has {len(priors)} entries, expected {self.num_classes}"
                )
            if any(p < 0 for p in priors):
                raise ConfigError("class_priors must be non-negative")
            if abs(sum(priors) - 1.0) > 1e-9:
                raise ConfigError("class_priors must sum to 1 within 1e-9")
        object.__setattr__(self, "class_priors", priors)


@dataclass(frozen=True)
class WorkerProfile:
    """Row-stochastic confusion matrix: row = true class, column = emitted label."""

    confusion: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.confusion, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ConfigError("confusion matrix must be square")
        if (mat < 0).any():
            raise ConfigError("confusion matrix entries must be >= 0")
        if np.abs(mat.sum(axis=1) - 1.0).max() > 1e-9:
            raise ConfigError("confusion matrix rows must sum to 1 within 1e-9")
        object.__setattr__(self, "confusion", mat)

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]


@dataclass(frozen=True)
class SparsityConfig:
    """Uniform random removal of a fraction of the observed annotations."""

    removal_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.removal_fraction < 1.0:
            raise ConfigError("removal_fraction must be in [0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class SyntheticBundle:
    """A generated training set plus its held-out test split.

    ``worker_profiles`` are the generative confusion matrices, kept for
    diagnostics; they are not part of the on-disk dataset format.
    """

    train: CrowdDataset
    test_features: np.ndarray
    test_labels: np.ndarray
    worker_profiles: tuple[WorkerProfile, ...]


def class_centroids(num_classes: int, feature_dim: int, separation: float) -> np.ndarray:
    """Regular-simplex centroids: every pair sits ``separation`` apart.

    Vertex c is (e_c - 1/C) scaled so edges have the requested length,
    embedded in the first ``num_classes`` feature dimensions.
    """
    if feature_dim < num_classes:
        raise ConfigError("feature_dim must be >= num_classes")
    base = np.eye(num_classes) - 1.0 / num_classes
    base *= separation / np.sqrt(2.0)
    out = np.zeros((num_classes, feature_dim))
    out[:, :num_classes] = base
    return out


def worker_profile_from_accuracy(accuracy: float, num_classes: int) -> WorkerProfile:
    """Diagonal ``accuracy``, remaining mass uniform over wrong labels."""
    off = (1.0 - accuracy) / (num_classes - 1)
    mat = np.full((num_classes, num_classes), off)
    np.fill_diagonal(mat, accuracy)
    return WorkerProfile(mat)


def sample_worker_annotation(profile: WorkerProfile, true_class: int,
                             rng: np.random.Generator) -> int:
    """Draw one annotation from the confusion row of the true class."""
    if not 0 <= true_class < profile.num_classes:
        raise ConfigError(f"true_class {true_class} out of range")
    cdf = np.cumsum(profile.confusion[true_class])
    k = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(k, profile.num_classes - 1)


def generate_crowd_dataset(config: SynthConfig) -> SyntheticBundle:
    """Generate a full synthetic bundle from one seeded stream.

    Draw order (fixed for reproducibility): training labels, training
    features, worker accuracies, per-instance annotation counts, worker
    assignments (sorted per instance), annotation labels in (instance,
    worker) order, then test labels and test features.

    Per-instance annotation counts are the stochastic rounding of
    ``annotations_per_instance_mean`` (floor + Bernoulli on the fractional
    part), clamped to [1, num_workers].
    """
    rng = np.random.default_rng(config.seed)
    priors = np.asarray(config.class_priors)
    c, n, d = config.num_classes, config.num_instances, config.feature_dim

    truth = rng.choice(c, size=n, p=priors)
    centroids = class_centroids(c, d, config.cluster_separation)
    features = centroids[truth] + rng.standard_normal((n, d))

    accs = rng.normal(config.worker_accuracy_mean, config.worker_accuracy_std,
                      size=config.num_workers)
    accs = np.clip(accs, 1.0 / c, 1.0)
    profiles = tuple(worker_profile_from_accuracy(float(a), c) for a in accs)

    mean = config.annotations_per_instance_mean
    base = int(np.floor(mean))
    counts = base + (rng.random(n) < (mean - base)).astype(np.int64)
    counts = np.clip(counts, 1, config.num_workers)

    inst_idx: list[int] = []
    work_idx: list[int] = []
    for i in range(n):
        chosen = np.sort(rng.choice(config.num_workers, size=int(counts[i]),
                                    replace=False))
        inst_idx.extend([i] * chosen.size)
        work_idx.extend(int(r) for r in chosen)
    labels = [
        sample_worker_annotation(profiles[r], int(truth[i]), rng)
        for i, r in zip(inst_idx, work_idx)
    ]

    test_truth = rng.choice(c, size=config.num_test_instances, p=priors)
    test_features = centroids[test_truth] + rng.standard_normal(
        (config.num_test_instances, d)
    )

    train = CrowdDataset(
        features=features,
        annotation_instances=np.asarray(inst_idx, dtype=np.int64),
        annotation_workers=np.asarray(work_idx, dtype=np.int64),
        annotation_labels=np.asarray(labels, dtype=np.int64),
        num_classes=c,
        num_workers=config.num_workers,
        ground_truth=truth,
    )
    return SyntheticBundle(train, test_features, test_truth, profiles)


def sparsify(dataset: CrowdDataset, config: SparsityConfig) -> CrowdDataset:
    """Remove round(p * |annotations|) entries uniformly without replacement.

    Rounding is round-half-to-even. Features, ground truth, and dimensions
    are untouched; instances may end up with zero annotations.
    """
    total = dataset.num_annotations
    n_remove = int(round(config.removal_fraction * total))
    if n_remove == 0:
        return dataset
    rng = np.random.default_rng(config.seed)
    drop = rng.choice(total, size=n_remove, replace=False)
    keep = np.ones(total, dtype=bool)
    keep[drop] = False
    return replace(
        dataset,
        annotation_instances=dataset.annotation_instances[keep],
        annotation_workers=dataset.annotation_workers[keep],
        annotation_labels=dataset.annotation_labels[keep],
    )
