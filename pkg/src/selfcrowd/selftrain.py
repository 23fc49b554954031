"""Iterative self-training driver and the annotation-sparsity sweep.

One run alternates: train the model on all current annotations, predict
annotation distributions for every unannotated (instance, worker) pair,
score them by entropy, select a batch with the configured strategy, add
the selections as hard annotations, retrain, and log metrics. Iteration 0
is the plain crowd-trained baseline before any pseudo-annotations.

Per-iteration training and selection seeds derive deterministically from
the run seed, so a config reproduces its history metric for metric.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ClassCounts, CrowdDataset, imbalance_ratio, validate_dataset
from .errors import ConfigError, DataValidationError, DivergenceError
from .model import CrowdModel, TrainConfig, evaluate, predict_pseudo_candidates, train
from .seeds import STREAM_RUN, STREAM_SELECT, STREAM_SPARSIFY, STREAM_TRAIN, derive_seed
from .selection import STRATEGY_NAMES, select
from .synth import SparsityConfig, sparsify

BASELINE_STRATEGY = "baseline"
SWEEP_STRATEGIES = (BASELINE_STRATEGY,) + STRATEGY_NAMES


@dataclass(frozen=True)
class SelfTrainConfig:
    """Settings for one self-training run.

    ``num_iterations=0`` runs the no-self-training baseline (history of
    length 1). ``retrain_mode`` is "cold" (fresh parameters with a derived
    seed each iteration) or "warm" (continue from the previous model).
    """

    strategy: str = "balanced"
    pseudo_per_iteration: int = 10000
    num_iterations: int = 14
    train: TrainConfig = field(default_factory=TrainConfig)
    retrain_mode: str = "cold"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigError(
                f"strategy must be one of {STRATEGY_NAMES}, got {self.strategy!r}"
            )
        if self.pseudo_per_iteration < 1:
            raise ConfigError("pseudo_per_iteration must be >= 1")
        if self.num_iterations < 0:
            raise ConfigError("num_iterations must be >= 0")
        if self.retrain_mode not in ("cold", "warm"):
            raise ConfigError('retrain_mode must be "cold" or "warm"')
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class IterationRecord:
    """Metrics logged after each (re)training.

    ``ratio_pseudo`` is the imbalance ratio of the pseudo-annotations
    selected in this iteration (None at iteration 0, where nothing has
    been selected yet); ``ratio_combined`` covers observed plus all
    selections so far.
    """

    iteration: int
    test_accuracy: float
    train_loss: float
    ratio_pseudo: float | None
    ratio_combined: float | None
    per_class_pseudo_counts: tuple[int, ...]
    cumulative_pseudo_total: int


@dataclass
class RunHistory:
    """Everything a finished run produced."""

    config: SelfTrainConfig
    records: tuple[IterationRecord, ...]
    model: CrowdModel
    checkpoint_path: str | None = None


def _ratio_or_none(counts: ClassCounts) -> float | None:
    if counts.total == 0:
        return None
    return imbalance_ratio(counts).ratio_R


def run_self_training(dataset: CrowdDataset, test_features, test_labels,
                      config: SelfTrainConfig) -> RunHistory:
    """Run the full self-training loop; see the module docstring.

    Stops after ``num_iterations`` or as soon as the candidate pool is
    empty. Training divergence aborts the run; the raised error carries
    the partial history.
    """
    violations = validate_dataset(dataset)
    if violations:
        raise DataValidationError(
            "dataset fails validation:\n  " + "\n  ".join(violations)
        )
    test_features = np.asarray(test_features, dtype=np.float64)
    test_labels = np.asarray(test_labels, dtype=np.int64).reshape(-1)
    if test_labels.size == 0:
        raise DataValidationError("test split must be non-empty")

    c = dataset.num_classes
    observed = np.asarray(dataset.label_counts().counts, dtype=np.int64)
    cumulative = np.zeros(c, dtype=np.int64)
    records: list[IterationRecord] = []
    current = dataset
    model: CrowdModel | None = None

    def _train_iteration(t: int) -> tuple[CrowdModel, list[float]]:
        cfg = replace(config.train, seed=derive_seed(config.seed, STREAM_TRAIN, t))
        init = model if (t > 0 and config.retrain_mode == "warm") else None
        return train(current, cfg, init=init)

    def _record(t: int, trace, pseudo: ClassCounts | None):
        acc = evaluate(model, test_features, test_labels)
        combined = class_counts_from_array(observed + cumulative)
        records.append(
            IterationRecord(
                iteration=t,
                test_accuracy=acc,
                train_loss=trace[-1] if trace else 0.0,
                ratio_pseudo=None if pseudo is None else _ratio_or_none(pseudo),
                ratio_combined=_ratio_or_none(combined),
                per_class_pseudo_counts=(0,) * c if pseudo is None else pseudo.counts,
                cumulative_pseudo_total=int(cumulative.sum()),
            )
        )

    try:
        model, trace = _train_iteration(0)
        _record(0, trace, None)
        for t in range(1, config.num_iterations + 1):
            candidates = predict_pseudo_candidates(model, current)
            if not candidates:
                break
            result = select(
                config.strategy,
                candidates,
                config.pseudo_per_iteration,
                seed=derive_seed(config.seed, STREAM_SELECT, t),
                num_classes=c,
            )
            if not result.chosen:
                break
            inst, work, labs = zip(*result.chosen)
            current = current.with_annotations(inst, work, labs)
            cumulative += np.asarray(result.per_class_chosen_counts.counts)
            model, trace = _train_iteration(t)
            _record(t, trace, result.per_class_chosen_counts)
    except DivergenceError as exc:
        exc.history = RunHistory(config, tuple(records), model)
        raise
    return RunHistory(config, tuple(records), model)


def class_counts_from_array(arr: np.ndarray) -> ClassCounts:
    return ClassCounts(tuple(int(v) for v in arr))


@dataclass(frozen=True)
class SweepRow:
    """Aggregated result of one (sparsity level, strategy) sweep cell."""

    removal_fraction: float
    strategy: str
    repeats: int
    mean_accuracy: float | None
    std_accuracy: float | None
    errors: str = ""


def _sweep_cell(args) -> tuple[int, int, str, float | None, str]:
    dataset, test_features, test_labels, config, p_index, p, rep, strategy = args
    try:
        sparsity_seed = derive_seed(config.seed, STREAM_SPARSIFY, p_index, rep)
        run_seed = derive_seed(config.seed, STREAM_RUN, p_index, rep)
        sparse = sparsify(dataset, SparsityConfig(p, seed=sparsity_seed))
        if strategy == BASELINE_STRATEGY:
            run_cfg = replace(config, num_iterations=0, seed=run_seed)
        else:
            run_cfg = replace(config, strategy=strategy, seed=run_seed)
        history = run_self_training(sparse, test_features, test_labels, run_cfg)
        return p_index, rep, strategy, history.records[-1].test_accuracy, ""
    except Exception as exc:  # noqa: BLE001 - per-cell failures must not abort the sweep
        return p_index, rep, strategy, None, f"repeat {rep}: {exc}"


def sweep_sparsity(dataset: CrowdDataset, test_features, test_labels,
                   p_values, repeats: int, config: SelfTrainConfig,
                   strategies=SWEEP_STRATEGIES, jobs: int = 1) -> list[SweepRow]:
    """Final test accuracy per (removal fraction, strategy), mean over repeats.

    Every cell gets its own derived sparsify and run seeds, so cells are
    independent and the sweep is reproducible; with ``jobs > 1`` cells run
    in parallel processes without changing the result. The row order is
    (p ascending as given, strategy in the given order). Standard deviation
    is the population convention over the successful repeats.
    """
    p_values = [float(p) for p in p_values]
    for p in p_values:
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"sparsity fraction {p} outside [0, 1)")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    for s in strategies:
        if s not in SWEEP_STRATEGIES:
            raise ConfigError(f"unknown sweep strategy {s!r}")

    cells = [
        (dataset, test_features, test_labels, config, pi, p, rep, strategy)
        for pi, p in enumerate(p_values)
        for rep in range(repeats)
        for strategy in strategies
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_cell, cells))
    else:
        outcomes = [_sweep_cell(cell) for cell in cells]

    by_cell: dict[tuple[int, str], list] = {}
    for p_index, rep, strategy, acc, err in outcomes:
        by_cell.setdefault((p_index, strategy), []).append((rep, acc, err))

    rows: list[SweepRow] = []
    for pi, p in enumerate(p_values):
        for strategy in strategies:
            entries = sorted(by_cell.get((pi, strategy), []))
            accs = [a for _, a, _ in entries if a is not None]
            errors = "; ".join(e for _, _, e in entries if e)
            rows.append(
                SweepRow(
                    removal_fraction=p,
                    strategy=strategy,
                    repeats=repeats,
                    mean_accuracy=float(np.mean(accs)) if accs else None,
                    std_accuracy=float(np.std(accs)) if accs else None,
                    errors=errors,
                )
            )
    return rows


def _fmt_float(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def history_header(num_classes: int) -> list[str]:
    return [
        "iteration",
        "test_accuracy",
        "train_loss",
        "ratio_pseudo",
        "ratio_combined",
        "cumulative_pseudo_total",
    ] + [f"pseudo_count_c{c + 1}" for c in range(num_classes)]


def write_history_csv(path, records, num_classes: int) -> None:
    """Fixed-column history table; full-precision floats, byte-stable."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(history_header(num_classes))
        for rec in records:
            writer.writerow(
                [
                    rec.iteration,
                    _fmt_float(rec.test_accuracy),
                    _fmt_float(rec.train_loss),
                    _fmt_float(rec.ratio_pseudo),
                    _fmt_float(rec.ratio_combined),
                    rec.cumulative_pseudo_total,
                    *rec.per_class_pseudo_counts,
                ]
            )


SWEEP_HEADER = ["removal_fraction", "strategy", "repeats",
                "mean_accuracy", "std_accuracy", "errors"]


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow(
                [
                    _fmt_float(row.removal_fraction),
                    row.strategy,
                    row.repeats,
                    _fmt_float(row.mean_accuracy),
                    _fmt_float(row.std_accuracy),
                    row.errors,
                ]
            )
