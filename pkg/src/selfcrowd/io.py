"""CSV dataset bundle reading and writing.

A dataset directory holds:

* ``features.csv``      - N rows x d comma-separated floats, no header.
* ``annotations.csv``   - header ``instance,worker,label``; instance and
  worker are 0-based row indices, labels are 1-based (0 is reserved for
  "unannotated" and rejected).
* ``truth.csv``         - optional; header ``instance,label``, 1-based labels.
* ``test_features.csv`` / ``test_truth.csv`` - optional held-out split,
  same formats.
* ``meta.json``         - dimensions (num_classes, num_workers,
  num_instances, feature_dim) plus a provenance block.

Labels convert between the 1-based on-disk convention and the 0-based
in-memory convention exactly here. Floats are written with ``repr`` so
writes are byte-stable and lossless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import CrowdDataset, validate_dataset
from .errors import DataValidationError

META_FORMAT_VERSION = 1

FEATURES_FILE = "features.csv"
ANNOTATIONS_FILE = "annotations.csv"
TRUTH_FILE = "truth.csv"
TEST_FEATURES_FILE = "test_features.csv"
TEST_TRUTH_FILE = "test_truth.csv"
META_FILE = "meta.json"


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_matrix(path: Path, matrix: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([_fmt(v) for v in row])


def _write_labels(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def save_dataset(directory, dataset: CrowdDataset,
                 test_features: np.ndarray | None = None,
                 test_labels: np.ndarray | None = None,
                 provenance: dict | None = None) -> None:
    """Write the CSV bundle for ``dataset`` (and optional test split)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / FEATURES_FILE, dataset.features)
    _write_labels(
        out / ANNOTATIONS_FILE,
        ["instance", "worker", "label"],
        zip(
            dataset.annotation_instances.tolist(),
            dataset.annotation_workers.tolist(),
            (dataset.annotation_labels + 1).tolist(),
        ),
    )
    if dataset.ground_truth is not None:
        _write_labels(
            out / TRUTH_FILE,
            ["instance", "label"],
            enumerate((dataset.ground_truth + 1).tolist()),
        )
    if test_features is not None:
        _write_matrix(out / TEST_FEATURES_FILE, np.atleast_2d(test_features))
        if test_labels is not None:
            _write_labels(
                out / TEST_TRUTH_FILE,
                ["instance", "label"],
                enumerate((np.asarray(test_labels) + 1).tolist()),
            )
    meta = {
        "format_version": META_FORMAT_VERSION,
        "num_classes": dataset.num_classes,
        "num_workers": dataset.num_workers,
        "num_instances": dataset.num_instances,
        "feature_dim": dataset.feature_dim,
        "num_annotations": dataset.num_annotations,
        "num_test_instances": 0 if test_features is None else int(np.atleast_2d(test_features).shape[0]),
        "provenance": provenance or {},
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataValidationError(
                    f"{path.name}:{lineno}: malformed value ({exc})"
                ) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataValidationError(
                    f"{path.name}:{lineno}: expected {width} columns, got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise DataValidationError(f"{path.name}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _read_int_rows(path: Path, expected_header: list[str]) -> list[list[int]]:
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path.name}: empty file") from None
        if [h.strip() for h in header] != expected_header:
            raise DataValidationError(
                f"{path.name}:1: expected header {','.join(expected_header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise DataValidationError(
                    f"{path.name}:{lineno}: expected {len(expected_header)} fields"
                )
            try:
                out.append([int(v) for v in row])
            except ValueError as exc:
                raise DataValidationError(
                    f"{path.name}:{lineno}: malformed integer ({exc})"
                ) from None
    return out


def _read_meta(path: Path) -> dict:
    try:
        meta = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataValidationError(f"{path.name}: unreadable meta ({exc})") from None
    for key in ("num_classes", "num_workers", "num_instances", "feature_dim"):
        if key not in meta:
            raise DataValidationError(f"{path.name}: missing key {key!r}")
    return meta


def load_dataset(directory) -> tuple[CrowdDataset, np.ndarray | None, np.ndarray | None]:
    """Read a bundle directory; returns (dataset, test_features, test_labels).

    The parsed dataset is checked against the sidecar meta dimensions and
    must pass every dataset invariant; violations raise with the full
    report. Labels on disk are 1-based; a label of 0 (the reserved missing
    marker) or below is a parse error.
    """
    root = Path(directory)
    meta = _read_meta(root / META_FILE)
    features = _read_matrix(root / FEATURES_FILE)

    ann_path = root / ANNOTATIONS_FILE
    triples = _read_int_rows(ann_path, ["instance", "worker", "label"])
    for k, (i, r, label) in enumerate(triples):
        if label < 1:
            raise DataValidationError(
                f"{ann_path.name}:{k + 2}: label {label} for (instance={i}, "
                f"worker={r}) is invalid; 0 is the reserved missing marker and "
                "labels are 1-based"
            )
    inst = np.asarray([t[0] for t in triples], dtype=np.int64)
    work = np.asarray([t[1] for t in triples], dtype=np.int64)
    labs = np.asarray([t[2] - 1 for t in triples], dtype=np.int64)

    truth = None
    truth_path = root / TRUTH_FILE
    if truth_path.exists():
        rows = _read_int_rows(truth_path, ["instance", "label"])
        truth_arr = np.full(features.shape[0], -1, dtype=np.int64)
        for i, label in rows:
            if label < 1:
                raise DataValidationError(
                    f"{truth_path.name}: label {label} is invalid; labels are 1-based"
                )
            if not 0 <= i < features.shape[0]:
                raise DataValidationError(
                    f"{truth_path.name}: instance {i} out of range"
                )
            truth_arr[i] = label - 1
        if (truth_arr < 0).any():
            missing = int(np.flatnonzero(truth_arr < 0)[0])
            raise DataValidationError(
                f"{truth_path.name}: no label for instance {missing}"
            )
        truth = truth_arr

    dataset = CrowdDataset(
        features=features,
        annotation_instances=inst,
        annotation_workers=work,
        annotation_labels=labs,
        num_classes=int(meta["num_classes"]),
        num_workers=int(meta["num_workers"]),
        ground_truth=truth,
    )
    if dataset.num_instances != int(meta["num_instances"]):
        raise DataValidationError(
            f"{FEATURES_FILE} has {dataset.num_instances} rows, "
            f"meta says {meta['num_instances']}"
        )
    if dataset.feature_dim != int(meta["feature_dim"]):
        raise DataValidationError(
            f"{FEATURES_FILE} has {dataset.feature_dim} columns, "
            f"meta says {meta['feature_dim']}"
        )
    violations = validate_dataset(dataset)
    if violations:
        raise DataValidationError(
            "dataset fails validation:\n  " + "\n  ".join(violations)
        )

    test_features = None
    test_labels = None
    tf_path = root / TEST_FEATURES_FILE
    if tf_path.exists():
        test_features = _read_matrix(tf_path)
        if test_features.shape[1] != dataset.feature_dim:
            raise DataValidationError(
                f"{TEST_FEATURES_FILE} has {test_features.shape[1]} columns, "
                f"expected {dataset.feature_dim}"
            )
        tt_path = root / TEST_TRUTH_FILE
        if tt_path.exists():
            rows = _read_int_rows(tt_path, ["instance", "label"])
            arr = np.full(test_features.shape[0], -1, dtype=np.int64)
            for i, label in rows:
                if label < 1 or not 0 <= i < arr.size:
                    raise DataValidationError(
                        f"{tt_path.name}: bad row (instance={i}, label={label})"
                    )
                arr[i] = label - 1
            if (arr < 0).any() or (arr >= dataset.num_classes).any():
                raise DataValidationError(
                    f"{tt_path.name}: labels incomplete or out of range"
                )
            test_labels = arr
    return dataset, test_features, test_labels
