"""Exact entropy/MI over finite joint distributions, a binning estimator for
layer activations, per-layer MI profiles over trained VFL states, and an exact
oracle for lumped Markov chains (parallel per-party chains merging at the top
model's first layer, then proceeding to the labels).

All mutual information is reported in bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PartitionedDataset
from .engine import TrainedState, aggregate_embeddings
from .errors import CapacityError, ConfigError, DataError
from .nn import forward

_MAX_PRODUCT_STATES = 1_000_000
_NORM_TOL = 1e-12


def _check_dist(p: np.ndarray, what: str = "distribution") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DataError(f"{what} must be a nonempty vector")
    if p.min() < 0:
        raise DataError(f"{what} has negative entries")
    if abs(p.sum() - 1.0) > _NORM_TOL:
        raise DataError(f"{what} sums to {p.sum()!r}, not 1")
    return p


def exact_entropy(dist: np.ndarray) -> float:
    """Shannon entropy -sum(p log2 p) in bits, with 0 log 0 = 0."""
    p = _check_dist(dist)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


@dataclass
class JointTable:
    """Exact finite joint distribution p(x, y)."""
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.size == 0:
            raise DataError("joint table must be a nonempty 2-D array")
        if self.probs.min() < 0:
            raise DataError("joint table has negative entries")
        if abs(self.probs.sum() - 1.0) > _NORM_TOL:
            raise DataError(f"joint table sums to {self.probs.sum()!r}, not 1")

    @property
    def n_x(self) -> int:
        return self.probs.shape[0]

    @property
    def n_y(self) -> int:
        return self.probs.shape[1]


def exact_mi(joint: JointTable) -> float:
    """I(X;Y) = sum p(x,y) log2( p(x,y) / (p(x) p(y)) ) over the joint table."""
    p = joint.probs
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mask = p > 0
    ratio = p[mask] / np.outer(px, py)[mask]
    return float(np.sum(p[mask] * np.log2(ratio)))


@dataclass
class MIEstimate:
    value: float       # bits, clamped at 0
    n_samples: int
    n_bins: int


def _quantize(activations: np.ndarray, n_bins: int) -> np.ndarray:
    lo = activations.min(axis=0)
    hi = activations.max(axis=0)
    span = hi - lo
    flat = span == 0  # constant column -> bin 0
    span = np.where(flat, 1.0, span)
    bins = np.floor((activations - lo) / span * n_bins).astype(np.int64)
    np.clip(bins, 0, n_bins - 1, out=bins)
    bins[:, flat] = 0
    return bins


def binned_mi(activations: np.ndarray, labels: np.ndarray, n_bins: int) -> MIEstimate:
    """Equal-width binning over each column's observed range, the binned row
    hashed to one discrete symbol, then exact MI on the empirical
    (symbol, label) joint."""
    activations = np.asarray(activations, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if activations.ndim != 2 or activations.shape[0] == 0:
        raise DataError("activations must be a nonempty N x d matrix")
    if activations.shape[0] != labels.shape[0]:
        raise DataError("row count does not match labels")
    if n_bins < 2:
        raise ConfigError("need n_bins >= 2")
    bins = _quantize(activations, n_bins)
    _, sym = np.unique(bins, axis=0, return_inverse=True)
    _, lab = np.unique(labels, return_inverse=True)
    n = labels.shape[0]
    counts = np.zeros((sym.max() + 1, lab.max() + 1))
    np.add.at(counts, (sym, lab), 1.0)
    value = exact_mi(JointTable(counts / n))
    return MIEstimate(max(value, 0.0), n, n_bins)


@dataclass
class MiProfile:
    """Per-layer binned MI against the labels: one list per party's bottom
    model plus one list for the top model, each ordered input -> output."""
    per_party: list
    top: list


def mi_profile(state: TrainedState, data: PartitionedDataset, n_bins: int) -> MiProfile:
    labels = data.base.labels
    per_party = []
    final_embeddings = []
    for k, bottom in enumerate(state.bottom_models):
        trace = forward(bottom, data.party_features(k))
        per_party.append([binned_mi(t, labels, n_bins) for t in trace[1:]])
        final_embeddings.append(trace[-1])
    top_trace = forward(state.top_model, aggregate_embeddings(final_embeddings))
    top = [binned_mi(t, labels, n_bins) for t in top_trace[1:]]
    return MiProfile(per_party, top)


def _check_stochastic(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.size == 0:
        raise DataError(f"{what} must be a nonempty 2-D array")
    if mat.min() < 0:
        raise DataError(f"{what} has negative entries")
    if np.max(np.abs(mat.sum(axis=1) - 1.0)) > _NORM_TOL:
        raise DataError(f"{what} rows do not sum to 1")
    return mat


@dataclass
class MarkovChainSpec:
    """Parallel per-branch chains X^i -> T_1^i -> ... -> T_n^i feeding a lumping
    transition (conditioned jointly on all branch terminals) into S_1, then
    S_1 -> ... -> S_m -> Y.

    The lumping table is indexed by the row-major raveling of the branch
    terminal tuple (t_1, ..., t_k).
    """
    input_dists: list          # per branch: p(X^i)
    branch_transitions: list   # per branch: [X->T_1, T_1->T_2, ..., T_{n-1}->T_n]
    lump_transition: np.ndarray
    top_transitions: list      # [S_1->S_2, ..., S_{m-1}->S_m]
    label_transition: np.ndarray

    def __post_init__(self):
        if len(self.input_dists) != len(self.branch_transitions) or not self.input_dists:
            raise ConfigError("need one transition list per branch")
        self.input_dists = [_check_dist(p, f"branch {i} input") for i, p in enumerate(self.input_dists)]
        checked = []
        for i, mats in enumerate(self.branch_transitions):
            if not mats:
                raise ConfigError(f"branch {i} needs at least one transition")
            mats = [_check_stochastic(m, f"branch {i} transition {j}") for j, m in enumerate(mats)]
            if mats[0].shape[0] != self.input_dists[i].size:
                raise ConfigError(f"branch {i} first transition does not match its input alphabet")
            for a, b in zip(mats, mats[1:]):
                if a.shape[1] != b.shape[0]:
                    raise ConfigError(f"branch {i} transitions do not chain")
            checked.append(mats)
        self.branch_transitions = checked

        terminal_sizes = [mats[-1].shape[1] for mats in self.branch_transitions]
        n_tuples = int(np.prod(terminal_sizes))
        if n_tuples > _MAX_PRODUCT_STATES:
            raise CapacityError(f"product alphabet has {n_tuples} states")
        self.lump_transition = _check_stochastic(self.lump_transition, "lumping transition")
        if self.lump_transition.shape[0] != n_tuples:
            raise ConfigError(
                f"lumping table has {self.lump_transition.shape[0]} rows, expected {n_tuples}")

        self.top_transitions = [_check_stochastic(m, f"top transition {j}")
                                for j, m in enumerate(self.top_transitions)]
        dim = self.lump_transition.shape[1]
        for j, m in enumerate(self.top_transitions):
            if m.shape[0] != dim:
                raise ConfigError(f"top transition {j} does not chain")
            dim = m.shape[1]
        self.label_transition = _check_stochastic(self.label_transition, "label transition")
        if self.label_transition.shape[0] != dim:
            raise ConfigError("label transition does not chain onto the top stages")

    @property
    def n_branches(self) -> int:
        return len(self.input_dists)

    @property
    def terminal_sizes(self) -> list:
        return [mats[-1].shape[1] for mats in self.branch_transitions]


@dataclass
class ChainMiSequences:
    """branches[i] = [I(X^i;Y), I(T_1^i;Y), ..., I(T_n^i;Y)]; top = [I(S_1;Y), ..., I(S_m;Y)]."""
    branches: list
    top: list


def _mi_from_cond(stage_dist: np.ndarray, cond_y: np.ndarray) -> float:
    return exact_mi(JointTable(stage_dist[:, None] * cond_y))


def chain_mi_sequence(chain: MarkovChainSpec) -> ChainMiSequences:
    """Exact I(stage; Y) for every stage, by marginalizing the full joint.

    Branches are mutually independent up to the lumping point, so
    P(y | T_j^i) factors through the branch terminal: marginalize the other
    branches' terminals against the lumped label map, then chain each stage's
    conditional onto it.
    """
    sizes = chain.terminal_sizes
    k = chain.n_branches

    # P(y | terminal tuple): lump, walk the top stages, emit the label
    to_y = chain.lump_transition
    for m in chain.top_transitions:
        to_y = to_y @ m
    to_y = to_y @ chain.label_transition
    n_y = to_y.shape[1]
    w = to_y.reshape(sizes + [n_y])

    # per-branch stage marginals: dists[i][j] = p of stage j (0 = X^i)
    dists = []
    for i in range(k):
        d = [chain.input_dists[i]]
        for m in chain.branch_transitions[i]:
            d.append(d[-1] @ m)
        dists.append(d)

    branches = []
    for i in range(k):
        # Q[t, y] = P(y | T_n^i = t), other branches marginalized out
        q = w
        for axis in sorted((a for a in range(k) if a != i), reverse=True):
            q = np.tensordot(dists[axis][-1], q, axes=(0, axis))
        seq = []
        cond_terminal = np.eye(sizes[i])
        mats = chain.branch_transitions[i]
        for j in range(len(mats), -1, -1):
            # cond_terminal = P(T_n^i | stage j)
            seq.append(_mi_from_cond(dists[i][j], cond_terminal @ q))
            if j > 0:
                cond_terminal = mats[j - 1] @ cond_terminal
        branches.append(seq[::-1])

    # tuple distribution = product of independent branch terminals
    p_tuple = dists[0][-1]
    for i in range(1, k):
        p_tuple = np.multiply.outer(p_tuple, dists[i][-1])
    p_tuple = p_tuple.reshape(-1)

    top_seq = []
    p_s = p_tuple @ chain.lump_transition
    cond = [chain.label_transition]
    for m in reversed(chain.top_transitions):
        cond.append(m @ cond[-1])
    cond = cond[::-1]  # cond[j] = P(Y | S_{j+1})
    top_seq.append(_mi_from_cond(p_s, cond[0]))
    for j, m in enumerate(chain.top_transitions):
        p_s = p_s @ m
        top_seq.append(_mi_from_cond(p_s, cond[j + 1]))

    return ChainMiSequences(branches, top_seq)


def random_chain(seed: int, n_branches: int, alphabet_max: int, bottom_depth: int,
                 top_depth: int, n_labels: int = None) -> MarkovChainSpec:
    """Seeded random chain with per-stage alphabet sizes in [2, alphabet_max].

    Transition rows are Dirichlet(0.3) draws: concentrated enough that the
    stages retain nontrivial information about the final labels."""
    if alphabet_max < 2 or bottom_depth < 1 or top_depth < 1 or n_branches < 1:
        raise ConfigError("need alphabet_max >= 2 and positive depths/branches")
    rng = np.random.default_rng(seed)

    def stoch(a, b):
        return rng.dirichlet([0.3] * b, size=a)

    def size():
        return int(rng.integers(2, alphabet_max + 1))

    input_dists = []
    branch_transitions = []
    for _ in range(n_branches):
        dims = [size() for _ in range(bottom_depth + 1)]
        p = rng.uniform(size=dims[0])
        input_dists.append(p / p.sum())
        branch_transitions.append([stoch(a, b) for a, b in zip(dims[:-1], dims[1:])])
    terminal = int(np.prod([m[-1].shape[1] for m in branch_transitions]))
    top_dims = [size() for _ in range(top_depth)]
    lump = stoch(terminal, top_dims[0])
    tops = [stoch(a, b) for a, b in zip(top_dims[:-1], top_dims[1:])]
    label = stoch(top_dims[-1], n_labels if n_labels else size())
    return MarkovChainSpec(input_dists, branch_transitions, lump, tops, label)
