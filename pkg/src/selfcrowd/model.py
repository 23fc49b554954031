"""Feed-forward classifier with a per-worker annotation layer.

The classifier maps features through one ReLU hidden layer to a softmax
over classes. Each worker owns an unconstrained square matrix that maps
the classifier's class probabilities to that worker's annotation
distribution:

    annotation_probs = softmax(class_probs @ worker_matrix)

Training minimizes, end to end, the cross-entropy of each *observed*
annotation under its worker's distribution (unannotated pairs contribute
nothing), plus an L2 penalty on weight matrices (biases excluded). The
matrix product deliberately consumes the softmax probabilities, not the
logits.

All math is float64 numpy with explicit analytic gradients and an Adam
update; everything is deterministic given the config seed (PCG64).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import CrowdDataset
from .errors import ConfigError, DataValidationError, DivergenceError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one training run.

    ``batch_size`` is capped at the number of annotation entries. A zero
    ``epochs`` leaves the initialization untouched (useful for baselines).
    Dropout defaults to off; when enabled it uses seeded masks on the
    hidden layer during training only.
    """

    learning_rate: float = 0.001
    epochs: int = 25
    batch_size: int = 512
    weight_decay: float = 0.0005
    hidden_units: int = 128
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.hidden_units < 1:
            raise ConfigError("hidden_units must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class CrowdModel:
    """Classifier parameters plus one square matrix per worker.

    ``w1``: (feature_dim, hidden), ``b1``: (hidden,), ``w2``: (hidden,
    num_classes), ``b2``: (num_classes,), ``worker_matrices``:
    (num_workers, num_classes, num_classes).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    worker_matrices: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_units(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def num_workers(self) -> int:
        return self.worker_matrices.shape[0]

    def copy(self) -> "CrowdModel":
        return CrowdModel(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
            self.worker_matrices.copy(),
        )

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.worker_matrices]


@dataclass(frozen=True, eq=False)
class PseudoCandidate:
    """Predicted annotation for an unannotated (instance, worker) pair.

    ``distribution`` is the worker's predicted annotation distribution,
    ``entropy`` its confidence score (lower = more confident), and
    ``argmax_class`` the 0-based hard label (ties toward the lower index).
    """

    instance: int
    worker: int
    distribution: np.ndarray
    entropy: float
    argmax_class: int


@dataclass(frozen=True)
class LossBreakdown:
    """Data cross-entropy and the separately reported L2 penalty."""

    data_loss: float
    l2_penalty: float

    @property
    def total(self) -> float:
        return self.data_loss + self.l2_penalty


def init_model(feature_dim: int, num_classes: int, num_workers: int,
               hidden_units: int, rng: np.random.Generator) -> CrowdModel:
    """Fresh parameters: symmetric uniform fan-in weights, zero biases,
    identity worker matrices (each worker starts out transparent)."""
    lim1 = 1.0 / np.sqrt(feature_dim)
    lim2 = 1.0 / np.sqrt(hidden_units)
    return CrowdModel(
        w1=rng.uniform(-lim1, lim1, size=(feature_dim, hidden_units)),
        b1=np.zeros(hidden_units),
        w2=rng.uniform(-lim2, lim2, size=(hidden_units, num_classes)),
        b2=np.zeros(num_classes),
        worker_matrices=np.tile(np.eye(num_classes), (num_workers, 1, 1)),
    )


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-stabilized softmax; finite input yields a valid distribution."""
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _hidden(model: CrowdModel, x: np.ndarray, dropout_mask: np.ndarray | None = None):
    pre = x @ model.w1 + model.b1
    h = np.maximum(pre, 0.0)
    if dropout_mask is not None:
        h = h * dropout_mask
    return pre, h


def forward_classifier(model: CrowdModel, x) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of rows."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = np.atleast_2d(arr)
    if batch.shape[1] != model.feature_dim:
        raise DataValidationError(
            f"feature vector has dim {batch.shape[1]}, model expects {model.feature_dim}"
        )
    _, h = _hidden(model, batch)
    probs = softmax(h @ model.w2 + model.b2)
    return probs[0] if single else probs


def forward_worker(class_probs, worker_matrix: np.ndarray) -> np.ndarray:
    """Worker annotation distribution: softmax of class_probs @ worker_matrix."""
    p = np.asarray(class_probs, dtype=np.float64)
    single = p.ndim == 1
    batch = np.atleast_2d(p)
    if batch.shape[1] != worker_matrix.shape[0]:
        raise DataValidationError(
            f"probability vector has {batch.shape[1]} classes, "
            f"worker matrix expects {worker_matrix.shape[0]}"
        )
    out = softmax(batch @ worker_matrix)
    return out[0] if single else out


def l2_penalty(model: CrowdModel, weight_decay: float) -> float:
    """weight_decay times the squared Frobenius norm of all weight matrices
    (worker matrices included, biases excluded)."""
    return float(
        weight_decay
        * (
            np.sum(model.w1**2)
            + np.sum(model.w2**2)
            + np.sum(model.worker_matrices**2)
        )
    )


def _annotation_nll(model: CrowdModel, features: np.ndarray, labels: np.ndarray,
                    workers: np.ndarray, dropout_mask: np.ndarray | None = None) -> float:
    """Summed cross-entropy of the given annotations (log-sum-exp stable)."""
    if labels.size == 0:
        return 0.0
    _, h = _hidden(model, features, dropout_mask)
    probs = softmax(h @ model.w2 + model.b2)
    total = 0.0
    for r in np.unique(workers):
        rows = np.flatnonzero(workers == r)
        logq = _log_softmax(probs[rows] @ model.worker_matrices[r])
        total -= float(logq[np.arange(rows.size), labels[rows]].sum())
    return total


def loss(model: CrowdModel, dataset: CrowdDataset, weight_decay: float = 0.0) -> LossBreakdown:
    """Total cross-entropy over all observed annotations plus the L2 term.

    Only (instance, worker) pairs that actually carry an annotation enter
    the sum; everything else contributes zero.
    """
    feats = dataset.features[dataset.annotation_instances]
    data = _annotation_nll(model, feats, dataset.annotation_labels,
                           dataset.annotation_workers)
    return LossBreakdown(data_loss=data, l2_penalty=l2_penalty(model, weight_decay))


@dataclass
class Gradients:
    """Gradient arrays matching CrowdModel's parameters field for field."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    worker_matrices: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.worker_matrices]


def _forward_backward(model: CrowdModel, features: np.ndarray, labels: np.ndarray,
                      workers: np.ndarray, weight_decay: float,
                      dropout_mask: np.ndarray | None = None):
    """One pass over a batch of annotations: (summed data loss, gradients).

    The data term touches only the worker matrices present in the batch;
    the L2 term contributes 2 * weight_decay * W to every weight matrix.
    """
    n = labels.size
    pre, h = _hidden(model, features, dropout_mask)
    z = h @ model.w2 + model.b2
    p = softmax(z)

    data_loss = 0.0
    dp = np.zeros_like(p)
    g_worker = 2.0 * weight_decay * model.worker_matrices
    for r in np.unique(workers):
        rows = np.flatnonzero(workers == r)
        mat = model.worker_matrices[r]
        logq = _log_softmax(p[rows] @ mat)
        data_loss -= float(logq[np.arange(rows.size), labels[rows]].sum())
        dq = np.exp(logq)
        dq[np.arange(rows.size), labels[rows]] -= 1.0
        g_worker[r] += p[rows].T @ dq
        dp[rows] = dq @ mat.T

    # Softmax Jacobian-vector product back to the classifier logits.
    dz = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    g_w2 = h.T @ dz + 2.0 * weight_decay * model.w2
    g_b2 = dz.sum(axis=0)
    dh = dz @ model.w2.T
    if dropout_mask is not None:
        dh = dh * dropout_mask
    dpre = dh * (pre > 0.0)
    g_w1 = features.T @ dpre + 2.0 * weight_decay * model.w1
    g_b1 = dpre.sum(axis=0)
    grads = Gradients(g_w1, g_b1, g_w2, g_b2, g_worker)
    return data_loss, grads


def gradients(model: CrowdModel, features, labels, workers,
              weight_decay: float = 0.0,
              dropout_mask: np.ndarray | None = None) -> Gradients:
    """Analytic gradient of (batch data loss + L2 penalty) for every parameter.

    Worker matrices absent from the batch receive only the L2 contribution,
    which vanishes when ``weight_decay`` is 0.
    """
    feats = np.asarray(features, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64).reshape(-1)
    works = np.asarray(workers, dtype=np.int64).reshape(-1)
    if labs.size == 0:
        raise DataValidationError("gradient batch must be non-empty")
    _, grads = _forward_backward(model, feats, labs, works, weight_decay, dropout_mask)
    return grads


def batch_objective(model: CrowdModel, features, labels, workers,
                    weight_decay: float = 0.0,
                    dropout_mask: np.ndarray | None = None) -> float:
    """Scalar objective the gradients differentiate: data loss + L2 penalty."""
    feats = np.asarray(features, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64).reshape(-1)
    works = np.asarray(workers, dtype=np.int64).reshape(-1)
    data = _annotation_nll(model, feats, labs, works, dropout_mask)
    return data + l2_penalty(model, weight_decay)


def train(dataset: CrowdDataset, config: TrainConfig,
          init: CrowdModel | None = None) -> tuple[CrowdModel, list[float]]:
    """Mini-batch Adam over the annotation entries of ``dataset``.

    Returns the trained model and the per-epoch mean data loss (per
    annotation, measured before each batch's update). Passing ``init``
    warm-starts from a copy of an existing model; otherwise parameters are
    freshly initialized from the config seed. Epoch shuffling, dropout
    masks, and initialization all come from one seeded PCG64 stream, so
    identical inputs give bit-identical results.

    Raises DivergenceError naming the epoch if the loss leaves the finite
    range.
    """
    rng = np.random.default_rng(config.seed)
    if init is None:
        model = init_model(dataset.feature_dim, dataset.num_classes,
                           dataset.num_workers, config.hidden_units, rng)
    else:
        if init.feature_dim != dataset.feature_dim or init.num_classes != dataset.num_classes:
            raise ConfigError("warm-start model shape does not match dataset")
        model = init.copy()

    n = dataset.num_annotations
    if n == 0 or config.epochs == 0:
        return model, [0.0] * config.epochs

    feats_all = dataset.features[dataset.annotation_instances]
    labels_all = dataset.annotation_labels
    workers_all = dataset.annotation_workers
    batch_size = min(config.batch_size, n)

    params = model.parameters()
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0
    trace: list[float] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            mask = None
            if config.dropout_rate > 0.0:
                keep = rng.random((idx.size, config.hidden_units)) >= config.dropout_rate
                mask = keep / (1.0 - config.dropout_rate)
            batch_loss, grads = _forward_backward(
                model, feats_all[idx], labels_all[idx], workers_all[idx],
                config.weight_decay, mask,
            )
            epoch_loss += batch_loss
            step += 1
            for p, g, m, v in zip(params, grads.arrays(), m_state, v_state):
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * g * g
                m_hat = m / (1.0 - ADAM_BETA1**step)
                v_hat = v / (1.0 - ADAM_BETA2**step)
                p -= config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        mean_loss = epoch_loss / n
        if not np.isfinite(mean_loss):
            raise DivergenceError(
                f"non-finite training loss in epoch {epoch}", epoch=epoch
            )
        trace.append(mean_loss)
    return model, trace


def evaluate(model: CrowdModel, features, labels) -> float:
    """Fraction of instances whose predicted class matches the label.

    Prediction is the classifier argmax with ties broken toward the lowest
    class index.
    """
    feats = np.asarray(features, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labs.size == 0:
        raise DataValidationError("cannot evaluate on an empty test set")
    probs = forward_classifier(model, np.atleast_2d(feats))
    return float(np.mean(probs.argmax(axis=1) == labs))


def _entropy_rows(q: np.ndarray) -> np.ndarray:
    safe = np.where(q > 0.0, q, 1.0)
    return np.maximum(0.0, -(np.where(q > 0.0, q * np.log(safe), 0.0)).sum(axis=1))


def predict_pseudo_candidates(model: CrowdModel, dataset: CrowdDataset,
                              exclude=()) -> list[PseudoCandidate]:
    """One candidate per unannotated, unexcluded (instance, worker) pair.

    Each candidate carries the worker's predicted annotation distribution
    under the current model, its entropy, and the argmax class. Candidates
    are ordered by (instance, worker).
    """
    mask = dataset.annotation_mask()
    for i, r in exclude:
        mask[i, r] = True
    probs = forward_classifier(model, dataset.features)
    out: list[PseudoCandidate] = []
    for r in range(dataset.num_workers):
        rows = np.flatnonzero(~mask[:, r])
        if rows.size == 0:
            continue
        q = softmax(probs[rows] @ model.worker_matrices[r])
        ents = _entropy_rows(q)
        args = q.argmax(axis=1)
        for k, i in enumerate(rows.tolist()):
            out.append(PseudoCandidate(i, r, q[k], float(ents[k]), int(args[k])))
    out.sort(key=lambda c: (c.instance, c.worker))
    return out


def save_checkpoint(path, model: CrowdModel, config: TrainConfig) -> None:
    """Write an .npz checkpoint (format documented in the README)."""
    np.savez(
        path,
        format_version=np.int64(CHECKPOINT_FORMAT_VERSION),
        w1=model.w1, b1=model.b1, w2=model.w2, b2=model.b2,
        worker_matrices=model.worker_matrices,
        train_config_json=json.dumps(asdict(config), sort_keys=True),
    )


def load_checkpoint(path) -> tuple[CrowdModel, TrainConfig]:
    with np.load(path, allow_pickle=False) as payload:
        version = int(payload["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise DataValidationError(
                f"unsupported checkpoint format version {version}"
            )
        model = CrowdModel(
            w1=payload["w1"], b1=payload["b1"],
            w2=payload["w2"], b2=payload["b2"],
            worker_matrices=payload["worker_matrices"],
        )
        config = TrainConfig(**json.loads(str(payload["train_config_json"])))
    return model, config
