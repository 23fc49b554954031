"""Pseudo-annotation confidence scoring and selection strategies.

Three interchangeable strategies pick which pseudo-annotations enter the
training set each round:

* ``random``     - uniform sample without replacement;
* ``confidence`` - globally lowest-entropy candidates;
* ``balanced``   - per-class quotas inversely proportional to how often a
  class appears in the candidate pool, so over-represented classes are
  undersampled and rare ones oversampled.

Lower entropy means a more confident prediction. All strategies share the
same deterministic tie-break on equal entropies: lower instance index
first, then lower worker index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import ClassCounts, class_counts
from .errors import DataValidationError

STRATEGY_NAMES = ("random", "confidence", "balanced")


def entropy(distribution) -> float:
    """Shannon entropy (natural log) of a probability vector.

    0 * ln 0 counts as 0, so one-hot vectors score exactly 0.0; the maximum
    is ln C at the uniform vector. Rejects vectors whose entries do not sum
    to 1 within 1e-6 or that contain negative mass.
    """
    p = np.asarray(distribution, dtype=np.float64).reshape(-1)
    total = p.sum()
    if abs(total - 1.0) > 1e-6:
        raise DataValidationError(
            f"distribution sums to {total!r}, not 1 within 1e-6"
        )
    if (p < -1e-12).any():
        raise DataValidationError("distribution has negative entries")
    pos = p[p > 0.0]
    return float(max(0.0, -np.sum(pos * np.log(pos))))


@dataclass(frozen=True)
class SelectionQuota:
    """Integer per-class selection counts plus the real-valued fractions.

    ``fractions`` are the normalized inverse-frequency weights over the
    candidate pool (they sum to 1 whenever the pool is non-empty);
    ``per_class`` is their integer apportionment, capped at each class's
    candidate supply, summing to min(requested_total, pool size) exactly.
    """

    requested_total: int
    per_class: tuple[int, ...]
    fractions: tuple[float, ...]

    @property
    def allocated_total(self) -> int:
        return int(sum(self.per_class))


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Apportion ``total`` integer units proportionally to ``weights``.

    Floor the exact shares, then hand the leftover units to the classes
    with the largest fractional parts; equal fractions resolve toward the
    lower class index (stable sort).
    """
    shares = weights / weights.sum() * total
    base = np.floor(shares).astype(np.int64)
    leftover = int(total - base.sum())
    order = np.argsort(-(shares - base), kind="stable")
    base[order[:leftover]] += 1
    return base


def quotas(candidate_counts: ClassCounts, requested_total: int) -> SelectionQuota:
    """Per-class quotas inversely proportional to candidate frequency.

    Classes absent from the pool get weight 0 (nothing can be selected
    from them). Apportionment is largest-remainder; any class whose quota
    exceeds its supply is capped and the surplus re-apportioned among the
    remaining classes until every unit is placed or the pool is exhausted.
    """
    if requested_total < 1:
        raise DataValidationError("requested_total must be >= 1")
    supply = np.asarray(candidate_counts.counts, dtype=np.int64)
    weights = np.where(supply > 0, 1.0 / np.maximum(supply, 1), 0.0)
    weight_sum = weights.sum()
    if weight_sum == 0.0:
        zeros = (0,) * len(supply)
        return SelectionQuota(requested_total, zeros, (0.0,) * len(supply))
    fractions = weights / weight_sum

    target = int(min(requested_total, supply.sum()))
    alloc = np.zeros_like(supply)
    active = supply > 0
    remaining = target
    while remaining > 0 and active.any():
        alloc = np.minimum(
            alloc + _largest_remainder(np.where(active, weights, 0.0), remaining),
            supply,
        )
        remaining = target - int(alloc.sum())
        active &= alloc < supply
    return SelectionQuota(
        requested_total,
        tuple(int(m) for m in alloc),
        tuple(float(t) for t in fractions),
    )


@dataclass(frozen=True)
class SelectionResult:
    """Chosen pseudo-annotations as hard (instance, worker, label) triples."""

    chosen: tuple[tuple[int, int, int], ...]
    per_class_chosen_counts: ClassCounts
    strategy_name: str


def _num_classes(candidates: Sequence, num_classes: int | None) -> int:
    if num_classes is not None:
        return num_classes
    if not candidates:
        return 0
    return len(candidates[0].distribution)


def _result(chosen, name: str, c: int) -> SelectionResult:
    counts = class_counts([lab for _, _, lab in chosen], c) if c else ClassCounts(())
    return SelectionResult(tuple(chosen), counts, name)


def _ranked(candidates: Iterable) -> list:
    return sorted(candidates, key=lambda c: (c.entropy, c.instance, c.worker))


def select_confidence(candidates, requested_total: int, num_classes: int | None = None) -> SelectionResult:
    """Globally most confident candidates, class distribution unconstrained."""
    c = _num_classes(candidates, num_classes)
    take = min(requested_total, len(candidates))
    chosen = [
        (cand.instance, cand.worker, cand.argmax_class)
        for cand in _ranked(candidates)[:take]
    ]
    return _result(chosen, "confidence", c)


def select_distribution_aware(candidates, requested_total: int, num_classes: int | None = None) -> SelectionResult:
    """Most confident candidates within per-class inverse-frequency quotas."""
    c = _num_classes(candidates, num_classes)
    if not candidates:
        return _result([], "balanced", c)
    pool_counts = class_counts([cand.argmax_class for cand in candidates], c)
    quota = quotas(pool_counts, requested_total)
    remaining = list(quota.per_class)
    chosen = []
    for cand in _ranked(candidates):
        if remaining[cand.argmax_class] > 0:
            remaining[cand.argmax_class] -= 1
            chosen.append((cand.instance, cand.worker, cand.argmax_class))
    return _result(chosen, "balanced", c)


def select_random(candidates, requested_total: int, seed: int, num_classes: int | None = None) -> SelectionResult:
    """Uniform sample without replacement; deterministic given the seed."""
    c = _num_classes(candidates, num_classes)
    take = min(requested_total, len(candidates))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(candidates), size=take, replace=False) if take else []
    chosen = [
        (candidates[int(k)].instance, candidates[int(k)].worker, candidates[int(k)].argmax_class)
        for k in picked
    ]
    return _result(chosen, "random", c)


def select(strategy: str, candidates, requested_total: int, *, seed: int = 0, num_classes: int | None = None) -> SelectionResult:
    """Dispatch by strategy name ("random" | "confidence" | "balanced")."""
    if strategy == "random":
        return select_random(candidates, requested_total, seed, num_classes)
    if strategy == "confidence":
        return select_confidence(candidates, requested_total, num_classes)
    if strategy == "balanced":
        return select_distribution_aware(candidates, requested_total, num_classes)
    raise DataValidationError(
        f"unknown strategy {strategy!r}; expected one of {STRATEGY_NAMES}"
    )
