"""aggVFL orchestration: split forward pass across K passive parties, embedding
aggregation at the active party, top-model loss, gradient routing back to each
party, defense hooks, and full attacker-trace capture.

A (config, data, seed) triple fixes every output bit-exactly. With a single
party and no defenses the training trajectory is identical to centralized
training of the full layer stack, which `train_centralized` reproduces using
the same seed-derivation scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, PartitionedDataset
from .defenses import (LABEL_KINDS, cae_soft_labels, clip_gradient,
                       compress_topk, derangement, dp_gaussian, rle_extend)
from .errors import ConfigError, DataError, ShapeError, TrainingDivergedError
from .nn import (LayerSpec, Model, ModelSpec, backward, cross_entropy_loss,
                 forward, init_model, sgd_step)

# sub-seed tags for independent random streams
_TAG_MODEL = 1
_TAG_SHUFFLE = 2
_TAG_PARTY = 3
_TAG_DP = 4
_TAG_LABELS = 5

_MASK = (1 << 63) - 1


def derive_seed(seed: int, *tags: int) -> int:
    """Stable sub-seed from a base seed and integer tags."""
    ss = np.random.SeedSequence([seed & _MASK] + [t & _MASK for t in tags])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SplitSpec:
    full_layers: ModelSpec
    cut_pos: int  # negative, counted from the last layer; -2 = cut before the 2nd-to-last

    def __post_init__(self):
        total = self.full_layers.n_layers
        if not (-total < self.cut_pos <= -1):
            raise ConfigError(f"cut_pos {self.cut_pos} out of range for {total} layers")

    @property
    def cut_index(self) -> int:
        return self.full_layers.n_layers + self.cut_pos


def split_model(split: SplitSpec) -> tuple:
    """Cut the full layer list into (bottom_spec, top_spec)."""
    cut = split.cut_index
    layers = split.full_layers.layers
    return ModelSpec(layers[:cut]), ModelSpec(layers[cut:])


def _share(width: int, k: int, party: int) -> int:
    base, rem = divmod(width, k)
    return base + (1 if party < rem else 0)


def split_for_parties(split: SplitSpec, feature_widths: list) -> tuple:
    """Per-party bottom specs plus the shared top spec.

    Each bottom layer's width is divided near-equally across the K parties
    (remainder to the lower indices) so the per-party embedding dims sum to
    the top model's input dim. Party 0's input width is its feature count.
    """
    bottom, top = split_model(split)
    k = len(feature_widths)
    if k < 1:
        raise ConfigError("need at least one party")
    specs = []
    for p in range(k):
        dims = [feature_widths[p]] + [_share(l.out_dim, k, p) for l in bottom.layers]
        if min(dims) < 1:
            raise ConfigError(f"layer width too small to split across {k} parties")
        layers = tuple(LayerSpec(a, b, l.activation)
                       for a, b, l in zip(dims[:-1], dims[1:], bottom.layers))
        specs.append(ModelSpec(layers))
    return specs, top


@dataclass(frozen=True)
class VflConfig:
    split: SplitSpec
    n_parties: int = 1
    epochs: int = 1
    batch_size: int = 64
    lr: float = 0.1
    defense_stack: tuple = ()
    seed: int = 0
    aggregation: str = "concat"

    def __post_init__(self):
        object.__setattr__(self, "defense_stack", tuple(self.defense_stack))
        if self.n_parties < 1:
            raise ConfigError("need at least one party")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("need epochs >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.aggregation != "concat":
            raise ConfigError("only concat aggregation is supported")
        if sum(1 for d in self.defense_stack if d.kind in LABEL_KINDS) > 1:
            raise ConfigError("at most one label defense per run")


@dataclass
class LabelCodec:
    """Maps top-model logits back to task-label predictions under label defenses."""
    kind: str                 # "plain", "cae", or "rle"
    n_classes: int
    inverse_perm: np.ndarray = None

    def decode(self, logits: np.ndarray) -> np.ndarray:
        pred = np.argmax(logits[:, :self.n_classes], axis=1)
        if self.kind == "cae":
            pred = self.inverse_perm[pred]
        return pred


@dataclass
class TrainedState:
    bottom_models: list
    top_model: Model
    mta_history: list
    codec: LabelCodec


@dataclass
class AttackerTrace:
    """Everything a passive party observes: its own embeddings per epoch, the
    gradients returned by the active party, and a post-training inference pass.
    Holds no top-model information."""
    party_id: int
    sample_indices: np.ndarray
    epoch_embeddings: list
    epoch_gradients: list
    final_embeddings: np.ndarray = None


def aggregate_embeddings(parts: list) -> np.ndarray:
    """Column-wise concatenation of per-party embeddings, in party order."""
    if not parts:
        raise ShapeError("no embeddings to aggregate")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"row counts differ across parties: {sorted(rows)}")
    return np.concatenate(parts, axis=1)


def scatter_gradient(agg_grad: np.ndarray, widths: list) -> list:
    """Split the aggregated gradient back into per-party column blocks."""
    agg_grad = np.asarray(agg_grad, dtype=np.float64)
    if sum(widths) != agg_grad.shape[1]:
        raise ShapeError(f"widths sum to {sum(widths)}, gradient has {agg_grad.shape[1]} cols")
    out = []
    start = 0
    for w in widths:
        out.append(agg_grad[:, start:start + w].copy())
        start += w
    return out


def _build_targets(config: VflConfig, labels: np.ndarray, n_classes: int):
    """Resolve the label defense (if any) into training targets, a codec, and
    the top model's output width."""
    for i, d in enumerate(config.defense_stack):
        if d.kind == "cae_labels":
            s = derive_seed(config.seed, _TAG_LABELS, i, d.seed)
            perm = derangement(n_classes, s)
            targets = cae_soft_labels(labels, n_classes, d.alpha, s)
            codec = LabelCodec("cae", n_classes, np.argsort(perm))
            return targets, codec, n_classes
        if d.kind == "rle_labels":
            s = derive_seed(config.seed, _TAG_LABELS, i, d.seed)
            targets = rle_extend(labels, n_classes, d.extra_dims, d.noise_scale, s)
            codec = LabelCodec("rle", n_classes)
            return targets, codec, n_classes + d.extra_dims
    return labels, LabelCodec("plain", n_classes), n_classes


def _apply_gradient_defenses(config: VflConfig, grad: np.ndarray, epoch: int,
                             batch: int, party: int) -> np.ndarray:
    for i, d in enumerate(config.defense_stack):
        if d.kind == "grad_clip":
            grad = clip_gradient(grad, d.max_norm)
        elif d.kind == "dp_gaussian":
            grad = dp_gaussian(grad, d.clip, d.sigma,
                               derive_seed(config.seed, _TAG_DP, i, epoch, batch, party))
        elif d.kind == "grad_compress":
            grad = compress_topk(grad, d.keep_ratio)
    return grad


def _widen_final(spec: ModelSpec, out_dim: int) -> ModelSpec:
    if spec.out_dim == out_dim:
        return spec
    last = spec.layers[-1]
    return ModelSpec(spec.layers[:-1] + (LayerSpec(last.in_dim, out_dim, last.activation),))


def _predict(bottoms: list, top: Model, data: PartitionedDataset, codec: LabelCodec) -> np.ndarray:
    zs = [forward(m, data.party_features(k))[-1] for k, m in enumerate(bottoms)]
    logits = forward(top, aggregate_embeddings(zs))[-1]
    return codec.decode(logits)


def train_vfl(config: VflConfig, data: PartitionedDataset) -> tuple:
    """Run the full aggVFL loop and return (TrainedState, [AttackerTrace per party]).

    Per batch: per-party bottom forward -> aggregate -> top forward -> loss ->
    top backward -> scatter (with gradient defenses) -> per-party bottom
    backward -> SGD on every model. One seeded shuffle per epoch is shared by
    all parties, so traces stay aligned on global sample indices.
    """
    if data.n_parties != config.n_parties:
        raise ConfigError(f"data has {data.n_parties} parties, config says {config.n_parties}")
    labels = data.base.labels
    n_classes = data.base.n_classes
    if config.split.full_layers.out_dim != n_classes:
        raise ConfigError(
            f"final layer width {config.split.full_layers.out_dim} != {n_classes} classes")
    if config.split.full_layers.in_dim != data.base.d:
        raise ConfigError(
            f"input width {config.split.full_layers.in_dim} != {data.base.d} feature columns")

    targets, codec, out_dim = _build_targets(config, labels, n_classes)
    full_spec = _widen_final(config.split.full_layers, out_dim)
    split = SplitSpec(full_spec, config.split.cut_pos)

    bottom_specs, top_spec = split_for_parties(split, data.widths())
    full_init = init_model(full_spec, derive_seed(config.seed, _TAG_MODEL))
    cut = split.cut_index
    top = Model(top_spec, full_init.weights[cut:], full_init.biases[cut:])
    if config.n_parties == 1:
        bottoms = [Model(bottom_specs[0], full_init.weights[:cut], full_init.biases[:cut])]
    else:
        bottoms = [init_model(s, derive_seed(config.seed, _TAG_PARTY, k))
                   for k, s in enumerate(bottom_specs)]

    n = data.base.n
    k_parties = config.n_parties
    party_x = [data.party_features(k) for k in range(k_parties)]
    emb_widths = [s.out_dim for s in bottom_specs]
    traces = [AttackerTrace(k, np.arange(n), [], []) for k in range(k_parties)]
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, _TAG_SHUFFLE))
    mta_history = []

    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_emb = [np.zeros((n, w)) for w in emb_widths]
        epoch_grad = [np.zeros((n, w)) for w in emb_widths]
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            bottom_traces = [forward(m, party_x[k][idx]) for k, m in enumerate(bottoms)]
            zs = [t[-1] for t in bottom_traces]
            agg = aggregate_embeddings(zs)
            top_trace = forward(top, agg)
            loss, logit_grad = cross_entropy_loss(top_trace[-1], targets[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            top_grads = backward(top, top_trace, logit_grad)
            parts = scatter_gradient(top_grads.input_grad, emb_widths)
            parts = [_apply_gradient_defenses(config, g, epoch, b, k)
                     for k, g in enumerate(parts)]
            for k in range(k_parties):
                epoch_emb[k][idx] = zs[k]
                epoch_grad[k][idx] = parts[k]
            bottom_grads = [backward(m, t, g)
                            for m, t, g in zip(bottoms, bottom_traces, parts)]
            top = sgd_step(top, top_grads, config.lr)
            bottoms = [sgd_step(m, g, config.lr) for m, g in zip(bottoms, bottom_grads)]
        for k in range(k_parties):
            traces[k].epoch_embeddings.append(epoch_emb[k])
            traces[k].epoch_gradients.append(epoch_grad[k])
        pred = _predict(bottoms, top, data, codec)
        mta_history.append(float(np.mean(pred == labels)))

    for k in range(k_parties):
        traces[k].final_embeddings = forward(bottoms[k], party_x[k])[-1]

    state = TrainedState(bottoms, top, mta_history, codec)
    return state, traces


def evaluate_mta(state: TrainedState, data: PartitionedDataset) -> float:
    """Fraction of samples whose decoded argmax prediction matches the label."""
    if data.base.n == 0:
        raise DataError("empty evaluation set")
    pred = _predict(state.bottom_models, state.top_model, data, state.codec)
    return float(np.mean(pred == data.base.labels))


def train_centralized(full_spec: ModelSpec, dataset: Dataset, epochs: int,
                      batch_size: int, lr: float, seed: int) -> tuple:
    """Plain minibatch SGD on the unsplit network, seeded exactly like train_vfl.

    Returns (Model, mta_history); with K = 1 and no defenses the VFL loop
    reproduces this trajectory bit-for-bit.
    """
    model = init_model(full_spec, derive_seed(seed, _TAG_MODEL))
    shuffle_rng = np.random.default_rng(derive_seed(seed, _TAG_SHUFFLE))
    n = dataset.n
    mta_history = []
    for epoch in range(epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            trace = forward(model, dataset.features[idx])
            loss, logit_grad = cross_entropy_loss(trace[-1], dataset.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            model = sgd_step(model, backward(model, trace, logit_grad), lr)
        pred = np.argmax(forward(model, dataset.features)[-1], axis=1)
        mta_history.append(float(np.mean(pred == dataset.labels)))
    return model, mta_history
