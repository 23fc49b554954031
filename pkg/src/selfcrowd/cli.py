"""Command-line interface.

Subcommands: ``gen`` (synthesize a dataset bundle), ``selftrain`` (one
self-training run), ``sweep`` (sparsity-level study), ``eval`` (score a
checkpoint on a bundle's test split), ``validate`` (check a bundle).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence. Every artifact-writing command emits a JSON summary embedding
the resolved config, seed, and version, so any run can be replayed by
passing the summary back as ``--config``.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import __version__
from .config import RunConfig, load_run_config
from .errors import ConfigError, DataValidationError, DivergenceError
from .io import load_dataset, save_dataset
from .model import evaluate, load_checkpoint, save_checkpoint
from .selftrain import run_self_training, sweep_sparsity, write_history_csv, write_sweep_csv
from .synth import generate_crowd_dataset, sparsify

EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_DIVERGENCE = 4

HISTORY_FILE = "history.csv"
RUN_SUMMARY_FILE = "run.json"
SWEEP_FILE = "sweep.csv"
SWEEP_SUMMARY_FILE = "sweep.json"
CHECKPOINT_FILE = "model.npz"


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(config_path, overrides, seed, out_dir, data_dir) -> RunConfig:
    try:
        return load_run_config(
            config_path, overrides, seed=seed, out_dir=out_dir,
            data_dir=data_dir, env=os.environ,
        )
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))


def _provenance(config: RunConfig) -> dict:
    snapshot = config.snapshot()
    digest = hashlib.sha256(
        json.dumps(snapshot, sort_keys=True).encode()
    ).hexdigest()
    return {
        "tool": "selfcrowd",
        "version": __version__,
        "seed": config.seed,
        "config_sha256": digest,
        "config": snapshot,
    }


def _write_summary(path: Path, kind: str, config: RunConfig, extra: dict) -> None:
    payload = {"kind": kind, **_provenance(config), **extra}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_bundle(config: RunConfig, need_test: bool):
    if not config.data_dir:
        _fail(EXIT_CONFIG_ERROR, "data_dir is required (flag --data or config key data_dir)")
    try:
        dataset, test_features, test_labels = load_dataset(config.data_dir)
    except DataValidationError as exc:
        _fail(EXIT_DATA_ERROR, str(exc))
    if need_test and (test_features is None or test_labels is None):
        _fail(EXIT_DATA_ERROR,
              f"{config.data_dir}: bundle has no labeled test split")
    return dataset, test_features, test_labels


def _maybe_sparsify(dataset, config: RunConfig):
    if config.sparsity.removal_fraction > 0.0:
        return sparsify(dataset, config.sparsity)
    return dataset


_shared_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML config file, or a run.json to replay."),
    click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                 help="Override a config field, e.g. --set train.epochs=5."),
    click.option("--seed", type=int, default=None, help="Master seed."),
    click.option("--out", "out_dir", default=None,
                 help=f"Output directory (overrides ${'SELFCROWD_OUT'} and config)."),
]


def _with_shared_options(fn):
    for option in reversed(_shared_options):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="selfcrowd")
def main():
    """Crowd-annotation learning with distribution-aware self-training."""


@main.command()
@_with_shared_options
def gen(config_path, overrides, seed, out_dir):
    """Generate a synthetic dataset bundle into the output directory."""
    config = _load_config(config_path, overrides, seed, out_dir, None)
    bundle = generate_crowd_dataset(config.synth)
    out = Path(config.out_dir)
    save_dataset(
        out,
        bundle.train,
        test_features=bundle.test_features,
        test_labels=bundle.test_labels,
        provenance=_provenance(config),
    )
    click.echo(
        f"wrote {bundle.train.num_instances} instances, "
        f"{bundle.train.num_annotations} annotations, "
        f"{bundle.test_features.shape[0]} test instances to {out}"
    )


@main.command()
@_with_shared_options
@click.option("--data", "data_dir", default=None, help="Dataset bundle directory.")
def selftrain(config_path, overrides, seed, out_dir, data_dir):
    """Run self-training; writes history.csv, run.json, and model.npz."""
    config = _load_config(config_path, overrides, seed, out_dir, data_dir)
    dataset, test_features, test_labels = _load_bundle(config, need_test=True)
    dataset = _maybe_sparsify(dataset, config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        history = run_self_training(dataset, test_features, test_labels,
                                    config.selftrain)
    except DivergenceError as exc:
        if exc.history is not None:
            write_history_csv(out / HISTORY_FILE, exc.history.records,
                              dataset.num_classes)
        _fail(EXIT_DIVERGENCE, str(exc))
    except DataValidationError as exc:
        _fail(EXIT_DATA_ERROR, str(exc))

    write_history_csv(out / HISTORY_FILE, history.records, dataset.num_classes)
    save_checkpoint(out / CHECKPOINT_FILE, history.model, config.selftrain.train)
    final = history.records[-1]
    _write_summary(
        out / RUN_SUMMARY_FILE,
        "selftrain",
        config,
        {
            "iterations_completed": final.iteration,
            "final_test_accuracy": final.test_accuracy,
            "final_ratio_combined": final.ratio_combined,
            "cumulative_pseudo_total": final.cumulative_pseudo_total,
            "history_csv": HISTORY_FILE,
            "checkpoint": CHECKPOINT_FILE,
        },
    )
    click.echo(
        f"{config.selftrain.strategy}: {final.iteration} iterations, "
        f"final test accuracy {final.test_accuracy:.4f} -> {out / HISTORY_FILE}"
    )


@main.command()
@_with_shared_options
@click.option("--data", "data_dir", default=None, help="Dataset bundle directory.")
@click.option("--jobs", type=int, default=None,
              help="Parallel worker processes for sweep cells.")
def sweep(config_path, overrides, seed, out_dir, data_dir, jobs):
    """Sparsity sweep; writes sweep.csv and sweep.json."""
    config = _load_config(config_path, overrides, seed, out_dir, data_dir)
    dataset, test_features, test_labels = _load_bundle(config, need_test=True)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep_sparsity(
        dataset,
        test_features,
        test_labels,
        config.sweep.p_values,
        config.sweep.repeats,
        config.selftrain,
        strategies=config.sweep.strategies,
        jobs=jobs if jobs is not None else config.sweep.jobs,
    )
    write_sweep_csv(out / SWEEP_FILE, rows)
    _write_summary(
        out / SWEEP_SUMMARY_FILE,
        "sweep",
        config,
        {"rows": len(rows), "sweep_csv": SWEEP_FILE},
    )
    failed = [row for row in rows if row.mean_accuracy is None]
    click.echo(f"wrote {len(rows)} sweep rows to {out / SWEEP_FILE}")
    if failed and len(failed) == len(rows):
        _fail(EXIT_DATA_ERROR, "every sweep cell failed")
    for row in failed:
        click.echo(
            f"warning: cell (p={row.removal_fraction}, {row.strategy}) failed: "
            f"{row.errors}",
            err=True,
        )


@main.command(name="eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True),
              help="Checkpoint written by selftrain.")
@click.option("--data", "data_dir", required=True, help="Dataset bundle directory.")
def eval_cmd(model_path, data_dir):
    """Print the checkpoint's accuracy on the bundle's test split."""
    try:
        model, _ = load_checkpoint(model_path)
        dataset, test_features, test_labels = load_dataset(data_dir)
    except DataValidationError as exc:
        _fail(EXIT_DATA_ERROR, str(exc))
    if test_features is None or test_labels is None:
        _fail(EXIT_DATA_ERROR, f"{data_dir}: bundle has no labeled test split")
    if model.num_classes != dataset.num_classes:
        _fail(EXIT_DATA_ERROR,
              f"checkpoint has {model.num_classes} classes, bundle has "
              f"{dataset.num_classes}")
    accuracy = evaluate(model, test_features, test_labels)
    click.echo(f"test_accuracy={accuracy!r}")


@main.command()
@click.option("--data", "data_dir", required=True, help="Dataset bundle directory.")
def validate(data_dir):
    """Check a bundle against every dataset invariant."""
    from .data import validate_dataset

    try:
        dataset, _, _ = load_dataset(data_dir)
    except DataValidationError as exc:
        _fail(EXIT_DATA_ERROR, str(exc))
    violations = validate_dataset(dataset)
    if violations:
        for v in violations:
            click.echo(f"violation: {v}")
        sys.exit(EXIT_DATA_ERROR)
    click.echo(
        f"ok: {dataset.num_instances} instances, {dataset.num_annotations} "
        f"annotations, {dataset.num_classes} classes, {dataset.num_workers} workers"
    )


if __name__ == "__main__":
    main()
