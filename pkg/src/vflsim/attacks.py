"""Embedding-based label-inference attacks (clustering and model completion),
the gradient-clustering variant, and attack metrics with lift normalization.

Attacks only consume what the threat model grants a passive party: its own
embeddings/gradients/bottom model plus a small labeled auxiliary set. Ground
truth appears solely as an evaluation argument used to score the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import derive_seed
from .errors import (AttackFailedError, AttackInfeasibleError, ConfigError,
                     DataError)
from .nn import (LayerSpec, Model, ModelSpec, backward, cross_entropy_loss,
                 forward, init_model, sgd_step)

_TAG_HEAD = 1
_TAG_FT_SHUFFLE = 2


@dataclass
class AuxiliaryData:
    """The attacker's small labeled sample: global indices, its own feature
    columns, and the true labels of those samples."""
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.indices) == len(self.features) == len(self.labels)):
            raise DataError("auxiliary fields must have equal lengths")

    def __len__(self) -> int:
        return len(self.indices)


def sample_auxiliary(features: np.ndarray, labels: np.ndarray, per_class: int,
                     n_classes: int, seed: int) -> AuxiliaryData:
    """Draw per_class seeded samples of every class from the attacker's view."""
    if per_class < 1:
        raise ConfigError("need per_class >= 1")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels, dtype=np.int64)
    picks = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        if pool.size < per_class:
            raise DataError(f"class {c} has only {pool.size} samples, need {per_class}")
        picks.append(rng.choice(pool, size=per_class, replace=False))
    idx = np.sort(np.concatenate(picks))
    return AuxiliaryData(idx, np.asarray(features)[idx], labels[idx])


def _check_aux(aux: AuxiliaryData, n_classes: int) -> None:
    if len(aux) == 0:
        raise DataError("auxiliary set is empty")
    present = set(aux.labels.tolist())
    missing = sorted(set(range(n_classes)) - present)
    if missing:
        raise DataError(f"auxiliary set is missing classes {missing}")


@dataclass
class AttackResult:
    attack_name: str
    predicted: np.ndarray          # per global index
    raw_accuracy: float
    lift_normalized_accuracy: float
    c_orig: int
    c_new: int


def attack_accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of correctly inferred labels."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise DataError("need equal-length nonempty label vectors")
    return float(np.mean(predicted == truth))


def lift_normalize(raw: float, c_new: int, c_orig: int) -> float:
    """Map accuracy on a c_new-class task back to the c_orig-class scale.

    raw / rg_new * rg_orig with rg = 1/classes; random guessing maps to
    random guessing, and values above 1 or below rg_orig are meaningful.
    """
    if c_new < 2 or c_orig < 2:
        raise ConfigError("class counts must be >= 2")
    if not (0.0 <= raw <= 1.0):
        raise DataError(f"raw accuracy {raw} outside [0, 1]")
    return raw * c_new / c_orig


def _pairwise_sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ centers.T) + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 300,
            tol: float = 1e-6) -> tuple:
    """Lloyd's algorithm with seeded k-means++ init and Euclidean metric.

    Stops when the largest center movement drops below tol. Returns
    (centers, assignment)."""
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        centers[j] = x[rng.choice(n, p=d2 / d2.sum())]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    assign = np.argmin(_pairwise_sq_dists(x, centers), axis=1)
    for _ in range(max_iter):
        new_centers = centers.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
        move = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        assign = np.argmin(_pairwise_sq_dists(x, centers), axis=1)
        if move < tol:
            break
    return centers, assign


def _cluster_attack(vectors: np.ndarray, n_classes: int, aux: AuxiliaryData,
                    seed: int, name: str, truth: np.ndarray, c_orig: int) -> AttackResult:
    vectors = np.asarray(vectors, dtype=np.float64)
    if n_classes < 2:
        raise ConfigError("need n_classes >= 2")
    _check_aux(aux, n_classes)
    if len(aux) and aux.indices.max() >= vectors.shape[0]:
        raise DataError("auxiliary indices outside the embedding rows")
    distinct = np.unique(vectors, axis=0).shape[0]
    if distinct < n_classes:
        raise AttackInfeasibleError(f"only {distinct} distinct rows for {n_classes} clusters")
    centers, assign = _kmeans(vectors, n_classes, seed)

    # name clusters by majority vote of the aux samples they contain
    cluster_labels = np.full(n_classes, -1, dtype=np.int64)
    aux_clusters = assign[aux.indices]
    for j in range(n_classes):
        votes = aux.labels[aux_clusters == j]
        if votes.size:
            cluster_labels[j] = np.argmax(np.bincount(votes, minlength=n_classes))
    named = np.flatnonzero(cluster_labels >= 0)
    for j in np.flatnonzero(cluster_labels < 0):
        dists = ((centers[named] - centers[j]) ** 2).sum(axis=1)
        cluster_labels[j] = cluster_labels[named[np.argmin(dists)]]

    predicted = cluster_labels[assign]
    raw = attack_accuracy(predicted, truth)
    return AttackResult(name, predicted, raw, lift_normalize(raw, n_classes, c_orig),
                        c_orig, n_classes)


def cluster_lia(embeddings: np.ndarray, n_classes: int, aux: AuxiliaryData,
                seed: int, *, truth: np.ndarray, c_orig: int = None) -> AttackResult:
    """K-means over embeddings plus aux-driven cluster naming.

    `truth` is the evaluator's ground truth for scoring; `c_orig` the original
    task's class count for lift normalization (defaults to n_classes)."""
    return _cluster_attack(embeddings, n_classes, aux, seed, "cluster",
                           truth, c_orig if c_orig else n_classes)


def gradient_cluster_lia(grad_rows: np.ndarray, n_classes: int, aux: AuxiliaryData,
                         seed: int, *, truth: np.ndarray, c_orig: int = None) -> AttackResult:
    """The clustering pipeline applied to per-sample returned gradients."""
    return _cluster_attack(grad_rows, n_classes, aux, seed, "gradient_cluster",
                           truth, c_orig if c_orig else n_classes)


def completion_lia(bottom: Model, aux: AuxiliaryData, target_features: np.ndarray,
                   n_classes: int, ft_epochs: int, ft_lr: float, seed: int, *,
                   truth: np.ndarray, c_orig: int = None,
                   batch_size: int = 64) -> AttackResult:
    """Model completion: append a fresh dense inference head to a copy of the
    bottom model, fine-tune the whole stack on the aux set, predict by argmax."""
    _check_aux(aux, n_classes)
    if aux.features.shape[1] != bottom.spec.in_dim:
        raise DataError("aux features do not match the bottom model input")
    head_spec = ModelSpec((LayerSpec(bottom.spec.out_dim, n_classes, "softmax"),))
    head = init_model(head_spec, derive_seed(seed, _TAG_HEAD))
    stack = Model(ModelSpec(bottom.spec.layers + head_spec.layers),
                  [w.copy() for w in bottom.weights] + head.weights,
                  [b.copy() for b in bottom.biases] + head.biases)

    rng = np.random.default_rng(derive_seed(seed, _TAG_FT_SHUFFLE))
    n = len(aux)
    bs = min(batch_size, n)
    for epoch in range(ft_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            trace = forward(stack, aux.features[idx])
            loss, logit_grad = cross_entropy_loss(trace[-1], aux.labels[idx])
            if not np.isfinite(loss):
                raise AttackFailedError(f"fine-tuning diverged at epoch {epoch}")
            stack = sgd_step(stack, backward(stack, trace, logit_grad), ft_lr)

    predicted = np.argmax(forward(stack, target_features)[-1], axis=1)
    raw = attack_accuracy(predicted, truth)
    return AttackResult("completion", predicted, raw,
                        lift_normalize(raw, n_classes, c_orig if c_orig else n_classes),
                        c_orig if c_orig else n_classes, n_classes)
