"""Deterministic sub-seed derivation.

All randomness in the toolkit flows from explicit seeds through numpy's
PCG64 generator. Nested stages (per-iteration retraining, per-cell sweep
runs) get their own generators seeded via ``derive_seed`` so that no two
stages share a stream and every stage is reproducible in isolation.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep derived seeds for unrelated purposes apart.
STREAM_GEN = 0
STREAM_TRAIN = 1
STREAM_SELECT = 2
STREAM_SPARSIFY = 3
STREAM_RUN = 4


def derive_seed(master_seed: int, *keys: int) -> int:
    """Derive a child seed from a master seed and a tuple of integer keys.

    Uses numpy's SeedSequence, so the mapping is documented, stable across
    platforms, and collision-resistant between distinct key tuples.
    """
    if master_seed < 0:
        raise ValueError("seeds must be non-negative")
    seq = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(seq.generate_state(1, np.uint64)[0])
