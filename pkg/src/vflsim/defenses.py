"""Interception-hook defenses: gradient clipping, DP noise, top-k compression,
confusional soft labels, and random label extension.

Gradient defenses transform the per-sample gradient rows sent back to the
passive parties; label defenses replace the cross-entropy targets on the
active party's side before training starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

GRADIENT_KINDS = ("grad_clip", "dp_gaussian", "grad_compress")
LABEL_KINDS = ("cae_labels", "rle_labels")


@dataclass(frozen=True)
class DefenseConfig:
    kind: str
    max_norm: float = 1.0       # grad_clip
    clip: float = 1.0           # dp_gaussian
    sigma: float = 0.5          # dp_gaussian
    keep_ratio: float = 0.25    # grad_compress
    alpha: float = 0.2          # cae_labels
    extra_dims: int = 0         # rle_labels
    noise_scale: float = 0.1    # rle_labels
    seed: int = 0               # cae permutation / rle noise

    def __post_init__(self):
        if self.kind not in GRADIENT_KINDS + LABEL_KINDS:
            raise ConfigError(f"unknown defense kind {self.kind!r}")
        if self.kind == "grad_clip" and self.max_norm <= 0:
            raise ConfigError("max_norm must be > 0")
        if self.kind == "dp_gaussian" and (self.clip <= 0 or self.sigma < 0):
            raise ConfigError("need clip > 0 and sigma >= 0")
        if self.kind == "grad_compress" and not (0 < self.keep_ratio <= 1):
            raise ConfigError("keep_ratio must be in (0, 1]")
        if self.kind == "cae_labels" and not (0 <= self.alpha <= 1):
            raise ConfigError("alpha must be in [0, 1]")
        if self.kind == "rle_labels" and (self.extra_dims < 0 or self.noise_scale < 0):
            raise ConfigError("need extra_dims >= 0 and noise_scale >= 0")

    @property
    def interception_point(self) -> str:
        return "gradients-to-parties" if self.kind in GRADIENT_KINDS else "labels-at-active-party"


def clip_gradient(grad_rows: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale rows whose L2 norm exceeds max_norm to norm exactly max_norm."""
    if max_norm <= 0:
        raise ConfigError("max_norm must be > 0")
    grad_rows = np.asarray(grad_rows, dtype=np.float64)
    norms = np.linalg.norm(grad_rows, axis=1, keepdims=True)
    scale = np.where(norms > max_norm, max_norm / np.where(norms == 0, 1.0, norms), 1.0)
    return grad_rows * scale


def dp_gaussian(grad_rows: np.ndarray, clip: float, sigma: float, seed: int) -> np.ndarray:
    """Per-row clip to norm <= clip, then add N(0, (sigma*clip)^2) noise per entry."""
    if clip <= 0 or sigma < 0:
        raise ConfigError("need clip > 0 and sigma >= 0")
    clipped = clip_gradient(grad_rows, clip)
    if sigma == 0:
        return clipped
    rng = np.random.default_rng(seed)
    return clipped + rng.normal(0.0, sigma * clip, clipped.shape)


def compress_topk(grad_rows: np.ndarray, keep_ratio: float) -> np.ndarray:
    """Keep the ceil(keep_ratio * cols) largest-magnitude entries per row, zero the rest.

    Magnitude ties break toward the lower column index.
    """
    if not (0 < keep_ratio <= 1):
        raise ConfigError("keep_ratio must be in (0, 1]")
    grad_rows = np.asarray(grad_rows, dtype=np.float64)
    cols = grad_rows.shape[1]
    keep = int(np.ceil(keep_ratio * cols))
    if keep >= cols:
        return grad_rows.copy()
    # stable argsort on -|v| keeps the lower column index first among ties
    order = np.argsort(-np.abs(grad_rows), axis=1, kind="stable")
    out = np.zeros_like(grad_rows)
    rows = np.arange(grad_rows.shape[0])[:, None]
    kept = order[:, :keep]
    out[rows, kept] = grad_rows[rows, kept]
    return out


def derangement(n_classes: int, seed: int) -> np.ndarray:
    """Seeded permutation of [0, n_classes) with no fixed point."""
    if n_classes < 2:
        raise ConfigError("derangement needs >= 2 classes")
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(n_classes)
        if not np.any(perm == np.arange(n_classes)):
            return perm


def cae_soft_labels(labels: np.ndarray, n_classes: int, alpha: float, seed: int) -> np.ndarray:
    """Confusional soft targets: one-hot of a deranged class, softened by alpha.

    Row for true class y is (1 - alpha) on derangement(y) and alpha/(C-1)
    spread over the remaining classes; rows sum to 1. The active party keeps
    the derangement so predictions can be un-permuted for accuracy.
    """
    if n_classes < 2:
        raise ConfigError("cae needs >= 2 classes")
    if not (0 <= alpha <= 1):
        raise ConfigError("alpha must be in [0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    perm = derangement(n_classes, seed)
    fake = perm[labels]
    out = np.full((labels.shape[0], n_classes), alpha / (n_classes - 1))
    out[np.arange(labels.shape[0]), fake] = 1.0 - alpha
    return out


def rle_extend(labels: np.ndarray, n_classes: int, extra_dims: int, noise_scale: float,
               seed: int) -> np.ndarray:
    """One-hot targets extended by extra_dims uniform-noise entries, renormalized to sum 1."""
    if extra_dims < 0 or noise_scale < 0:
        raise ConfigError("need extra_dims >= 0 and noise_scale >= 0")
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    out = np.zeros((n, n_classes + extra_dims))
    out[np.arange(n), labels] = 1.0
    if extra_dims:
        rng = np.random.default_rng(seed)
        out[:, n_classes:] = rng.uniform(0.0, noise_scale, (n, extra_dims))
    out /= out.sum(axis=1, keepdims=True)
    return out
