import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vflsim import (ConfigError, DataError, DefenseConfig, PartitionedDataset,
                    ShapeError, SplitSpec, TrainingDivergedError, VflConfig,
                    aggregate_embeddings, evaluate_mta, gen_synthetic, mlp_spec,
                    partition_features, scatter_gradient, split_for_parties,
                    split_model, train_centralized, train_vfl)
from vflsim.engine import AttackerTrace


def _partitioned(n=300, d=12, classes=4, sep=5.0, k=1, seed=3):
    ds = gen_synthetic(n, d, classes, sep, seed)
    return ds, PartitionedDataset(ds, partition_features(d, k, seed))


def test_split_counts():
    spec = mlp_spec([8, 8, 8, 8, 8, 8, 4])  # 6 layers
    bottom, top = split_model(SplitSpec(spec, -2))
    assert (bottom.n_layers, top.n_layers) == (4, 2)
    bottom, top = split_model(SplitSpec(spec, -5))
    assert (bottom.n_layers, top.n_layers) == (1, 5)


def test_split_out_of_range():
    spec = mlp_spec([8, 8, 8, 8, 8, 8, 4])
    with pytest.raises(ConfigError):
        SplitSpec(spec, -7)
    with pytest.raises(ConfigError):
        SplitSpec(spec, 0)


def test_split_concatenation_reproduces_full():
    spec = mlp_spec([8, 16, 12, 6, 4])
    for cut in (-1, -2, -3):
        bottom, top = split_model(SplitSpec(spec, cut))
        assert bottom.layers + top.layers == spec.layers


def test_party_split_widths_sum_to_top_input():
    spec = mlp_spec([10, 9, 7, 4])
    bottoms, top = split_for_parties(SplitSpec(spec, -2), [4, 3, 3])
    assert sum(b.out_dim for b in bottoms) == top.in_dim == 9
    assert [b.in_dim for b in bottoms] == [4, 3, 3]
    assert [b.out_dim for b in bottoms] == [3, 3, 3]


def test_aggregate_single_party_identity():
    x = np.random.default_rng(0).normal(size=(5, 4))
    assert np.array_equal(aggregate_embeddings([x]), x)


def test_aggregate_concatenates_in_order():
    assert np.array_equal(aggregate_embeddings([np.array([[1.0, 2.0]]), np.array([[3.0]])]),
                          [[1.0, 2.0, 3.0]])


def test_aggregate_party_order_preserved():
    parts = [np.full((2, 2), 1.0), np.full((2, 2), 2.0), np.full((2, 4), 3.0)]
    agg = aggregate_embeddings(parts)
    assert agg.shape == (2, 8)
    assert np.array_equal(agg[0], [1, 1, 2, 2, 3, 3, 3, 3])


def test_aggregate_row_mismatch():
    with pytest.raises(ShapeError):
        aggregate_embeddings([np.zeros((2, 2)), np.zeros((3, 2))])


def test_scatter_slices():
    parts = scatter_gradient(np.array([[1.0, 2.0, 3.0, 4.0]]), [1, 3])
    assert np.array_equal(parts[0], [[1.0]])
    assert np.array_equal(parts[1], [[2.0, 3.0, 4.0]])


def test_scatter_width_mismatch():
    with pytest.raises(ShapeError):
        scatter_gradient(np.zeros((2, 5)), [2, 2])


@given(st.integers(1, 5), st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_scatter_inverts_aggregate(k, seed):
    rng = np.random.default_rng(seed)
    widths = rng.integers(1, 6, size=k)
    parts = [rng.normal(size=(4, w)) for w in widths]
    out = scatter_gradient(aggregate_embeddings(parts), list(widths))
    assert all(np.array_equal(a, b) for a, b in zip(parts, out))


def test_centralized_equivalence_bit_for_bit():
    ds, part = _partitioned(k=1, seed=9)
    spec = mlp_spec([12, 16, 16, 16, 4])
    central, hist_c = train_centralized(spec, ds, epochs=5, batch_size=32, lr=0.1, seed=9)
    cfg = VflConfig(SplitSpec(spec, -2), 1, 5, 32, 0.1, (), 9)
    state, _ = train_vfl(cfg, part)
    split_w = state.bottom_models[0].weights + state.top_model.weights
    split_b = state.bottom_models[0].biases + state.top_model.biases
    assert all(np.array_equal(a, b) for a, b in zip(split_w, central.weights))
    assert all(np.array_equal(a, b) for a, b in zip(split_b, central.biases))
    assert hist_c == state.mta_history


def test_train_reaches_high_mta_on_separable_blobs():
    ds = gen_synthetic(1500, 20, 10, 6.0, 0)
    part = PartitionedDataset(ds, partition_features(20, 2, 0))
    spec = mlp_spec([20, 24, 24, 24, 24, 24, 10])
    cfg = VflConfig(SplitSpec(spec, -2), 2, 30, 64, 0.1, (), 0)
    state, traces = train_vfl(cfg, part)
    assert state.mta_history[-1] >= 0.90
    assert len(traces) == 2


def test_training_divergence_names_epoch():
    ds, part = _partitioned()
    spec = mlp_spec([12, 16, 4])
    cfg = VflConfig(SplitSpec(spec, -1), 1, 3, 32, 1e6, (), 0)
    with pytest.raises(TrainingDivergedError, match="epoch"):
        train_vfl(cfg, part)


def test_deterministic_trajectories():
    ds, part = _partitioned(k=2, seed=4)
    spec = mlp_spec([12, 8, 8, 4])
    cfg = VflConfig(SplitSpec(spec, -2), 2, 3, 32, 0.1, (), 4)
    s1, t1 = train_vfl(cfg, part)
    s2, t2 = train_vfl(cfg, part)
    assert s1.mta_history == s2.mta_history
    for a, b in zip(t1, t2):
        assert all(np.array_equal(x, y) for x, y in zip(a.epoch_embeddings, b.epoch_embeddings))
        assert all(np.array_equal(x, y) for x, y in zip(a.epoch_gradients, b.epoch_gradients))
        assert np.array_equal(a.final_embeddings, b.final_embeddings)


def test_parameter_count_conserved_across_cuts():
    spec = mlp_spec([12, 16, 16, 16, 4])
    total = spec.param_count()
    for cut in (-1, -2, -3):
        bottoms, top = split_for_parties(SplitSpec(spec, cut), [12])
        assert bottoms[0].param_count() + top.param_count() == total


def test_trace_holds_no_top_model_fields():
    names = {f.name for f in dataclasses.fields(AttackerTrace)}
    assert names == {"party_id", "sample_indices", "epoch_embeddings",
                     "epoch_gradients", "final_embeddings"}
    ds, part = _partitioned(k=2, seed=1)
    cfg = VflConfig(SplitSpec(mlp_spec([12, 8, 8, 4]), -2), 2, 2, 32, 0.1, (), 1)
    _, traces = train_vfl(cfg, part)
    for k, tr in enumerate(traces):
        assert tr.party_id == k
        assert np.array_equal(tr.sample_indices, np.arange(ds.n))
        for arr in tr.epoch_embeddings + tr.epoch_gradients + [tr.final_embeddings]:
            assert isinstance(arr, np.ndarray) and np.isfinite(arr).all()


def test_trace_embeddings_match_inference_forward():
    # final_embeddings must equal a fresh bottom forward pass on the full data
    from vflsim.nn import forward
    ds, part = _partitioned(k=2, seed=6)
    cfg = VflConfig(SplitSpec(mlp_spec([12, 8, 8, 4]), -2), 2, 3, 32, 0.1, (), 6)
    state, traces = train_vfl(cfg, part)
    for k, tr in enumerate(traces):
        again = forward(state.bottom_models[k], part.party_features(k))[-1]
        assert np.array_equal(tr.final_embeddings, again)


def test_evaluate_mta_forced_predictions_are_exact():
    # one-hot features through an identity layer force predictions == labels
    from vflsim.data import Dataset
    from vflsim.nn import LayerSpec, ModelSpec
    labels = np.arange(40) % 4
    feats = np.eye(4)[labels] * 10.0
    ds = Dataset(feats, labels, 4)
    part = PartitionedDataset(ds, partition_features(4, 1, 0))
    spec = ModelSpec((LayerSpec(4, 4, "relu"), LayerSpec(4, 4, "softmax")))
    cfg = VflConfig(SplitSpec(spec, -1), 1, 0, 32, 0.1, (), 0)
    state, _ = train_vfl(cfg, part)
    for m in (state.bottom_models[0], state.top_model):
        for i in range(len(m.weights)):
            m.weights[i] = np.eye(4)
    assert evaluate_mta(state, part) == 1.0


def test_evaluate_mta_untrained_is_near_chance():
    ds = gen_synthetic(1000, 20, 10, 6.0, 2)
    part = PartitionedDataset(ds, partition_features(20, 1, 2))
    cfg = VflConfig(SplitSpec(mlp_spec([20, 16, 10]), -1), 1, 0, 64, 0.1, (), 2)
    state, _ = train_vfl(cfg, part)
    assert 0.0 <= evaluate_mta(state, part) <= 0.3


def test_evaluate_mta_perfect_on_trained():
    ds, part = _partitioned(n=400, sep=8.0, seed=5)
    cfg = VflConfig(SplitSpec(mlp_spec([12, 16, 16, 4]), -2), 1, 20, 32, 0.1, (), 5)
    state, _ = train_vfl(cfg, part)
    assert evaluate_mta(state, part) == state.mta_history[-1]
    assert evaluate_mta(state, part) >= 0.95


def test_empty_evaluation_set_is_a_data_error():
    from vflsim.data import Dataset
    with pytest.raises(DataError):
        Dataset(np.zeros((0, 4)), np.zeros(0, dtype=int), 2)


def test_gradient_defenses_change_received_gradients():
    ds, part = _partitioned(k=2, seed=8)
    spec = mlp_spec([12, 8, 8, 4])
    base = VflConfig(SplitSpec(spec, -2), 2, 2, 32, 0.1, (), 8)
    defended = VflConfig(SplitSpec(spec, -2), 2, 2, 32, 0.1,
                         (DefenseConfig("grad_compress", keep_ratio=0.25),), 8)
    _, t0 = train_vfl(base, part)
    _, t1 = train_vfl(defended, part)
    got = t1[0].epoch_gradients[0]
    keep = int(np.ceil(0.25 * got.shape[1]))
    assert np.all((got != 0).sum(axis=1) <= keep)
    assert not np.array_equal(t0[0].epoch_gradients[0], got)


def test_cae_training_decodes_mta_against_true_labels():
    ds, part = _partitioned(n=600, sep=7.0, seed=11)
    cfg = VflConfig(SplitSpec(mlp_spec([12, 16, 16, 4]), -2), 1, 25, 32, 0.1,
                    (DefenseConfig("cae_labels", alpha=0.1),), 11)
    state, _ = train_vfl(cfg, part)
    assert state.codec.kind == "cae"
    assert state.mta_history[-1] >= 0.9  # accuracy against the real labels


def test_rle_training_widens_top_and_keeps_mta():
    ds, part = _partitioned(n=600, sep=7.0, seed=12)
    cfg = VflConfig(SplitSpec(mlp_spec([12, 16, 16, 4]), -2), 1, 25, 32, 0.1,
                    (DefenseConfig("rle_labels", extra_dims=4, noise_scale=0.1),), 12)
    state, _ = train_vfl(cfg, part)
    assert state.top_model.spec.out_dim == 8
    assert state.mta_history[-1] >= 0.9


def test_two_label_defenses_rejected():
    spec = mlp_spec([12, 8, 4])
    with pytest.raises(ConfigError):
        VflConfig(SplitSpec(spec, -1), 1, 1, 32, 0.1,
                  (DefenseConfig("cae_labels"), DefenseConfig("rle_labels")), 0)
