"""Dataset container and annotation-distribution diagnostics.

Class labels are 0-based everywhere in memory; the CSV layer converts to
the external 1-based convention (with 0 reserved for "unannotated") exactly
once at read/write time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataValidationError


@dataclass(frozen=True)
class ClassCounts:
    """Per-class annotation counts over a fixed set of classes.

    ``counts[c]`` is the number of labels of class ``c``; classes with no
    labels are present with count 0.
    """

    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def num_classes(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class ImbalanceStats:
    """Imbalance diagnostics of a label multiset.

    ``ratio_R`` is (most-populated count - least-populated count) / total,
    in [0, 1]: 0 means perfectly balanced, 1 means one class holds every
    label while another holds none. Classes with zero labels participate,
    so a missing class forces ``n_min = 0``. ``class_std_percent`` is the
    population standard deviation of the per-class proportions, in percent.
    """

    ratio_R: float
    n_max: int
    n_min: int
    n_anno: int
    class_std_percent: float


def class_counts(labels, num_classes: int) -> ClassCounts:
    """Tally 0-based class labels into per-class counts.

    Raises DataValidationError naming the first offending position if any
    label falls outside ``0..num_classes-1``.
    """
    if num_classes < 1:
        raise DataValidationError("num_classes must be >= 1")
    arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    bad = np.flatnonzero((arr < 0) | (arr >= num_classes))
    if bad.size:
        k = int(bad[0])
        raise DataValidationError(
            f"label {int(arr[k])} at position {k} outside 0..{num_classes - 1}"
        )
    counts = np.bincount(arr, minlength=num_classes)
    return ClassCounts(tuple(int(c) for c in counts))


def imbalance_ratio(counts: ClassCounts) -> ImbalanceStats:
    """Imbalance statistics of a count vector; requires a non-empty total."""
    total = counts.total
    if total <= 0:
        raise DataValidationError("imbalance ratio undefined for zero annotations")
    arr = np.asarray(counts.counts, dtype=np.int64)
    n_max = int(arr.max())
    n_min = int(arr.min())
    return ImbalanceStats(
        ratio_R=(n_max - n_min) / total,
        n_max=n_max,
        n_min=n_min,
        n_anno=total,
        class_std_percent=class_proportion_std(counts),
    )


def class_proportion_std(counts: ClassCounts) -> float:
    """Population standard deviation of per-class proportions, in percent."""
    total = counts.total
    if total <= 0:
        raise DataValidationError("proportion spread undefined for zero annotations")
    props = np.asarray(counts.counts, dtype=np.float64) / total
    return float(np.std(props) * 100.0)


@dataclass(frozen=True)
class CrowdDataset:
    """Instances with sparse per-worker annotations and optional ground truth.

    Annotations are stored as three parallel arrays (instance index, worker
    index, 0-based label), canonically sorted by (instance, worker). An
    absent (instance, worker) pair means that worker did not annotate that
    instance. Construction only normalizes shapes and dtypes; semantic
    invariants (index ranges, duplicates) are checked by
    :func:`validate_dataset` so that violating datasets can still be built
    and diagnosed.
    """

    features: np.ndarray
    annotation_instances: np.ndarray
    annotation_workers: np.ndarray
    annotation_labels: np.ndarray
    num_classes: int
    num_workers: int
    ground_truth: np.ndarray | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2:
            raise DataValidationError("features must be a 2-D (instances x dims) array")
        inst = np.asarray(self.annotation_instances, dtype=np.int64).reshape(-1)
        work = np.asarray(self.annotation_workers, dtype=np.int64).reshape(-1)
        labs = np.asarray(self.annotation_labels, dtype=np.int64).reshape(-1)
        if not (inst.size == work.size == labs.size):
            raise DataValidationError("annotation arrays must have equal lengths")
        order = np.lexsort((work, inst))
        truth = self.ground_truth
        if truth is not None:
            truth = np.asarray(truth, dtype=np.int64).reshape(-1)
        for name, value in (
            ("features", feats),
            ("annotation_instances", inst[order]),
            ("annotation_workers", work[order]),
            ("annotation_labels", labs[order]),
            ("ground_truth", truth),
        ):
            object.__setattr__(self, name, value)

    @property
    def num_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_annotations(self) -> int:
        return int(self.annotation_instances.size)

    def pair_set(self) -> set[tuple[int, int]]:
        """Set of annotated (instance, worker) pairs."""
        return set(
            zip(self.annotation_instances.tolist(), self.annotation_workers.tolist())
        )

    def annotation_mask(self) -> np.ndarray:
        """Boolean (num_instances, num_workers) matrix of annotated pairs."""
        mask = np.zeros((self.num_instances, self.num_workers), dtype=bool)
        mask[self.annotation_instances, self.annotation_workers] = True
        return mask

    def label_counts(self) -> ClassCounts:
        return class_counts(self.annotation_labels, self.num_classes)

    def with_annotations(self, instances, workers, labels) -> "CrowdDataset":
        """New dataset with extra annotations appended.

        Raises if any new pair collides with an existing annotation or with
        another new pair; the caller is responsible for disjoint selection.
        """
        inst = np.asarray(instances, dtype=np.int64).reshape(-1)
        work = np.asarray(workers, dtype=np.int64).reshape(-1)
        labs = np.asarray(labels, dtype=np.int64).reshape(-1)
        existing = self.pair_set()
        fresh = set()
        for i, r in zip(inst.tolist(), work.tolist()):
            if (i, r) in existing or (i, r) in fresh:
                raise DataValidationError(
                    f"annotation for pair (instance={i}, worker={r}) already present"
                )
            fresh.add((i, r))
        return replace(
            self,
            annotation_instances=np.concatenate([self.annotation_instances, inst]),
            annotation_workers=np.concatenate([self.annotation_workers, work]),
            annotation_labels=np.concatenate([self.annotation_labels, labs]),
        )


def validate_dataset(dataset: CrowdDataset) -> list[str]:
    """Check every dataset invariant; returns one message per violation.

    An empty report means the dataset is valid. Checks dimension sanity,
    index and label ranges, duplicate (instance, worker) pairs, and ground
    truth shape/range.
    """
    report: list[str] = []
    n = dataset.num_instances
    if n < 1:
        report.append("dataset has no instances")
    if dataset.feature_dim < 1:
        report.append("feature_dim must be >= 1")
    if dataset.num_classes < 2:
        report.append(f"num_classes must be >= 2, got {dataset.num_classes}")
    if dataset.num_workers < 1:
        report.append(f"num_workers must be >= 1, got {dataset.num_workers}")
    if not np.isfinite(dataset.features).all():
        report.append("features contain non-finite values")

    inst = dataset.annotation_instances
    work = dataset.annotation_workers
    labs = dataset.annotation_labels
    for k in np.flatnonzero((inst < 0) | (inst >= n)):
        report.append(
            f"annotation instance index {int(inst[k])} out of range 0..{n - 1}"
        )
    for k in np.flatnonzero((work < 0) | (work >= dataset.num_workers)):
        report.append(
            f"annotation worker index {int(work[k])} out of range "
            f"0..{dataset.num_workers - 1}"
        )
    for k in np.flatnonzero((labs < 0) | (labs >= dataset.num_classes)):
        report.append(
            f"label {int(labs[k])} out of range 0..{dataset.num_classes - 1} "
            f"at (instance={int(inst[k])}, worker={int(work[k])})"
        )
    # Arrays are lexsorted by (instance, worker): duplicates are adjacent.
    if inst.size > 1:
        dup = np.flatnonzero((np.diff(inst) == 0) & (np.diff(work) == 0))
        for k in dup:
            report.append(
                f"duplicate annotation for pair (instance={int(inst[k])}, "
                f"worker={int(work[k])})"
            )

    truth = dataset.ground_truth
    if truth is not None:
        if truth.size != n:
            report.append(
                f"ground truth has {truth.size} entries, expected {n}"
            )
        for k in np.flatnonzero((truth < 0) | (truth >= dataset.num_classes)):
            report.append(
                f"ground truth label {int(truth[k])} out of range at instance {int(k)}"
            )
    return report
