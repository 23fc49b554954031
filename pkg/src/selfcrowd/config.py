"""Run configuration: YAML files, defaults, overrides, and snapshots.

A config file is YAML with one section per subsystem::

    seed: 1234
    out_dir: runs/demo
    data_dir: data/demo
    synth:      {num_classes: 8, ...}
    train:      {learning_rate: 0.001, ...}
    selftrain:  {strategy: balanced, ...}
    sparsity:   {removal_fraction: 0.0}
    sweep:      {p_values: [...], repeats: 5, strategies: [...], jobs: 1}

Every field has a default, so an empty config is valid. Precedence is
command-line flags > environment > file > defaults. Section seeds default
to values derived from the master seed; setting them explicitly wins.

``load_run_config`` also accepts a previously emitted ``run.json`` (any
JSON object with a "config" key): feeding a run summary back in replays
that run exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .model import TrainConfig
from .seeds import STREAM_GEN, STREAM_SPARSIFY, derive_seed
from .selftrain import SWEEP_STRATEGIES, SelfTrainConfig
from .synth import SparsityConfig, SynthConfig

DEFAULT_SEED = 0
DEFAULT_OUT_DIR = "selfcrowd_out"
OUT_DIR_ENV_VAR = "SELFCROWD_OUT"

_SECTIONS = ("synth", "train", "selftrain", "sparsity", "sweep")
_TOP_KEYS = {"seed", "out_dir", "data_dir", *_SECTIONS}


@dataclass(frozen=True)
class SweepConfig:
    p_values: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    repeats: int = 5
    strategies: tuple[str, ...] = SWEEP_STRATEGIES
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))
        object.__setattr__(self, "strategies", tuple(self.strategies))
        for p in self.p_values:
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"p_values entry {p} outside [0, 1)")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for s in self.strategies:
            if s not in SWEEP_STRATEGIES:
                raise ConfigError(
                    f"strategies entry {s!r} not in {SWEEP_STRATEGIES}"
                )


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration for any CLI command."""

    seed: int = DEFAULT_SEED
    out_dir: str = DEFAULT_OUT_DIR
    data_dir: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selftrain: SelfTrainConfig = field(default_factory=SelfTrainConfig)
    sparsity: SparsityConfig = field(default_factory=lambda: SparsityConfig(0.0))
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def snapshot(self) -> dict:
        """JSON-ready dict of every resolved field; feeding it back via
        ``build_run_config`` reproduces this config exactly."""
        selftrain = asdict(self.selftrain)
        selftrain.pop("train")  # lives in the top-level train section
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data_dir": self.data_dir,
            "synth": asdict(self.synth),
            "train": asdict(self.train),
            "selftrain": selftrain,
            "sparsity": asdict(self.sparsity),
            "sweep": asdict(self.sweep),
        }


def _build_section(name: str, cls, payload: dict, **extra):
    try:
        return cls(**(payload | extra))
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def build_run_config(raw: dict) -> RunConfig:
    """Construct a RunConfig from a plain dict (missing keys = defaults).

    Unknown keys raise with their field path. Section seeds absent from
    the input are derived from the master seed.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section in _SECTIONS:
        if section in raw and not isinstance(raw[section], dict):
            raise ConfigError(f"{section}: must be a mapping")

    seed = raw.get("seed", DEFAULT_SEED)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed: must be a non-negative integer")

    synth_raw = dict(raw.get("synth", {}))
    synth_raw.setdefault("seed", derive_seed(seed, STREAM_GEN))
    if "class_priors" in synth_raw and synth_raw["class_priors"] is not None:
        synth_raw["class_priors"] = tuple(synth_raw["class_priors"])
    synth = _build_section("synth", SynthConfig, synth_raw)

    train_raw = dict(raw.get("train", {}))
    train_raw.setdefault("seed", seed)
    train = _build_section("train", TrainConfig, train_raw)

    selftrain_raw = dict(raw.get("selftrain", {}))
    selftrain_raw.setdefault("seed", seed)
    if "train" in selftrain_raw:
        raise ConfigError(
            "selftrain.train: configure training in the top-level train section"
        )
    selftrain = _build_section("selftrain", SelfTrainConfig, selftrain_raw, train=train)

    sparsity_raw = dict(raw.get("sparsity", {}))
    sparsity_raw.setdefault("removal_fraction", 0.0)
    sparsity_raw.setdefault("seed", derive_seed(seed, STREAM_SPARSIFY))
    sparsity = _build_section("sparsity", SparsityConfig, sparsity_raw)

    sweep_raw = dict(raw.get("sweep", {}))
    if "p_values" in sweep_raw:
        sweep_raw["p_values"] = tuple(sweep_raw["p_values"])
    if "strategies" in sweep_raw:
        sweep_raw["strategies"] = tuple(sweep_raw["strategies"])
    sweep = _build_section("sweep", SweepConfig, sweep_raw)

    out_dir = raw.get("out_dir", DEFAULT_OUT_DIR)
    data_dir = raw.get("data_dir")
    return RunConfig(
        seed=seed,
        out_dir=str(out_dir),
        data_dir=None if data_dir is None else str(data_dir),
        synth=synth,
        train=train,
        selftrain=selftrain,
        sparsity=sparsity,
        sweep=sweep,
    )


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, _, value = text.partition("=")
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        parsed = yaml.safe_load(value)
    except yaml.YAMLError:
        parsed = value
    return path, parsed


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings (values parsed as YAML scalars)."""
    out = json.loads(json.dumps(raw))  # deep copy of plain data
    for text in overrides:
        path, value = _parse_override(text)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part} is not a section")
        node[path[-1]] = value
    return out


def read_config_file(path) -> dict:
    """Raw config dict from a YAML file or an emitted run.json."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    if p.suffix == ".json":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p.name}: invalid JSON ({exc})") from None
    else:
        try:
            payload = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p.name}: invalid YAML ({exc})") from None
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ConfigError(f"{p.name}: config root must be a mapping")
    # A run summary embeds its config; accept it for replay.
    if "config" in payload and isinstance(payload["config"], dict):
        payload = payload["config"]
    return payload


def load_run_config(path=None, overrides=(), *, seed=None, out_dir=None,
                    data_dir=None, env=None) -> RunConfig:
    """Resolve a RunConfig from file + overrides + dedicated flags.

    ``env`` is the process environment mapping (injectable for tests);
    the output directory honors $SELFCROWD_OUT unless --out is given.
    """
    raw = read_config_file(path) if path is not None else {}
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    if env and env.get(OUT_DIR_ENV_VAR):
        raw["out_dir"] = env[OUT_DIR_ENV_VAR]
    if out_dir is not None:
        raw["out_dir"] = out_dir
    if data_dir is not None:
        raw["data_dir"] = data_dir
    return build_run_config(raw)
