"""Small worked examples with hand-computed answers, one block per module."""

import math
import warnings

import numpy as np
import pytest

from custseg.cluster import adjusted_rand_index, davies_bouldin, elbow_from_inertias, evaluate_grid, kmeans_fit, silhouette
from custseg.dtw import DtwConfig, dtw_matrix
from custseg.features import FeatureMatrix, HybridSpec, assemble_hybrid, pca_fit, pca_transform
from custseg.ingest import (
    SynthConfig,
    build_dataset,
    generate_synthetic,
    parse_customers,
    parse_transactions,
)
from custseg.preprocess import EOS, SOS, PaddedSequenceBatch, apply_zscore, fit_zscore, teacher_arrays
from custseg.rfm import RfmRaw, quintile_scores, rfm_features, score_rfm
from custseg.seq2seq import (
    LstmCellParams,
    ModelBatch,
    TrainConfig,
    attention_weights,
    batch_loss,
    encode,
    extract_features,
    init_params,
    loss_and_grads,
    lstm_cell_forward,
    train,
    zero_params,
)

TX_HEADER = "Trans_ID,Account_ID,Type,Amount,Balance,Timestamp\n"
CU_HEADER = "Customer_ID,Account_ID,Gender,Age,Latitude,Longitude\n"


# ---------------------------------------------------------------- ingest


def test_example_rows_parse_exactly():
    (tx,) = parse_transactions(TX_HEADER + "T00695247,A00002378,Credit,700.0,700.0,1356998400\n")
    assert (tx.trans_id, tx.account_id, tx.tx_type, tx.amount, tx.balance, tx.timestamp) == (
        "T00695247", "A00002378", 1, 700.0, 700.0, 1356998400,
    )
    (cu,) = parse_customers(CU_HEADER + "C00000001,A00000001,0.0,29,35.08449,-106.65114\n")
    assert (cu.customer_id, cu.account_id, cu.gender, cu.age) == ("C00000001", "A00000001", 0.0, 29)
    assert (cu.latitude, cu.longitude) == (35.08449, -106.65114)


def test_header_only_files_are_empty():
    assert parse_transactions(TX_HEADER) == []
    assert parse_customers(CU_HEADER) == []


def test_single_customer_single_transaction():
    txs = parse_transactions(TX_HEADER + "T1,A1,Debit,5.0,95.0,100\n")
    cus = parse_customers(CU_HEADER + "C1,A1,1.0,40,0.0,0.0\n")
    ds = build_dataset(txs, cus)
    assert len(ds) == 1 and ds.max_len == 1


def test_planted_spend_levels_are_separated():
    ds, labels = generate_synthetic(SynthConfig(n_customers=90, seed=5))
    means = [np.mean(np.concatenate([s.amounts() for s, l in zip(ds.sequences, labels) if l == g])) for g in (0, 1)]
    assert 5 <= means[1] / means[0] <= 20


# ---------------------------------------------------------------- preprocess


def _amount_batch(amounts):
    rows = [[[i % 2, a, 10.0 * i, 100.0 * i]] for i, a in enumerate(amounts)]
    return PaddedSequenceBatch.from_rows(rows)


def test_zscore_of_one_two_three():
    params = fit_zscore(_amount_batch([1.0, 2.0, 3.0]))
    assert params.mu[1] == pytest.approx(2.0)
    assert params.sigma[1] == pytest.approx(0.8165, abs=1e-4)
    assert (1.0 - params.mu[1]) / params.sigma[1] == pytest.approx(-1.2247, abs=1e-4)


def test_refit_after_normalising_is_standard(rng):
    batch = PaddedSequenceBatch.from_rows([rng.normal(3, 7, size=(n, 4)) for n in (2, 5, 3)])
    again = fit_zscore(apply_zscore(batch, fit_zscore(batch)))
    np.testing.assert_allclose(again.mu, 0, atol=1e-12)
    np.testing.assert_allclose(again.sigma, 1, atol=1e-12)


def test_teacher_pair_for_length_one_in_width_three():
    x = np.array([0.5, -1.0, 2.0, 0.25])
    inputs, targets, mask = teacher_arrays(PaddedSequenceBatch.from_rows([x[None]], max_len=3))
    np.testing.assert_array_equal(inputs[0, 0], SOS)
    np.testing.assert_array_equal(inputs[0, 1], x)
    np.testing.assert_array_equal(inputs[0, 2:], 0)
    np.testing.assert_array_equal(targets[0, 0], x)
    np.testing.assert_array_equal(targets[0, 1], EOS)
    np.testing.assert_array_equal(mask[0], [True, True, False, False])


def test_empty_batch_gives_no_pairs():
    inputs, targets, mask = teacher_arrays(PaddedSequenceBatch.from_rows([]))
    assert len(inputs) == len(targets) == len(mask) == 0


# ---------------------------------------------------------------- dtw


def test_two_customer_matrix():
    m = dtw_matrix([np.array([0.0]), np.array([1.0])], DtwConfig(zscore=False))
    np.testing.assert_array_equal(m.values, [[0.0, 1.0], [1.0, 0.0]])


def test_identical_series_give_zero_matrix():
    s = np.array([1.0, 4.0, 2.0])
    m = dtw_matrix([s, s.copy(), s.copy()], DtwConfig(zscore=False))
    np.testing.assert_array_equal(m.values, 0)


def test_duplicate_customers_share_rows(rng):
    series = [rng.normal(size=n) for n in (3, 5, 4)]
    series.append(series[1].copy())
    d = dtw_matrix(series, DtwConfig(zscore=False)).values
    np.testing.assert_array_equal(d[1], d[3][[0, 3, 2, 1]])
    for i in range(len(d)):
        assert d[i, i] == d[i].min()


# ---------------------------------------------------------------- rfm


def test_increasing_monetary_scores_one_to_five():
    assert quintile_scores([10, 20, 30, 40, 50]).tolist() == [1, 2, 3, 4, 5]


def _raw(cid, recency, frequency, monetary):
    return RfmRaw(cid, float(recency), frequency, float(monetary))


def test_extreme_and_identical_customers():
    raws = [_raw(f"C{i}", 10 - i, i + 1, 100 * (i + 1)) for i in range(5)]
    scores = score_rfm(raws)
    assert (scores[-1].r, scores[-1].f, scores[-1].m) == (5, 5, 5)
    assert (scores[0].r, scores[0].f, scores[0].m) == (1, 1, 1)
    feats = rfm_features(scores).values
    assert np.all(np.sign(feats[-1]) == -np.sign(feats[0]))

    same = score_rfm([_raw(f"C{i}", 3, 4, 50) for i in range(6)])
    assert all((s.r, s.f, s.m) == (1, 1, 1) for s in same)


def test_single_customer_passes_through_with_warning():
    with pytest.warns(UserWarning, match="constant"):
        feats = rfm_features(score_rfm([_raw("C0", 1, 2, 3)]))
    np.testing.assert_array_equal(feats.values, [[1.0, 1.0, 1.0]])


# ---------------------------------------------------------------- features / PCA


def test_collinear_points_give_diagonal_component():
    model = pca_fit(np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]), q=1)
    np.testing.assert_allclose(model.components[:, 0], [1 / math.sqrt(2)] * 2, atol=1e-12)
    assert model.explained_variance_ratio[0] == pytest.approx(1.0)
    z = pca_transform(np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]), model)[:, 0]
    assert z[1] - z[0] == pytest.approx(z[2] - z[1])


def test_axis_aligned_cross_orders_by_variance():
    x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 3.0], [0.0, -3.0]])
    model = pca_fit(x, q=2)
    np.testing.assert_allclose(np.abs(model.components[:, 0]), [0, 1], atol=1e-12)
    np.testing.assert_allclose(model.explained_variance, [6.0, 2.0 / 3.0], atol=1e-12)
    np.testing.assert_allclose(pca_transform(x, model).mean(axis=0), 0, atol=1e-12)


def _blocks(rng, n=20):
    ids = tuple(f"C{i}" for i in range(n))
    return (
        FeatureMatrix(rng.normal(size=(n, 6)), ids, "lstm"),
        FeatureMatrix(rng.normal(size=(n, n)), ids, "dtw"),
        FeatureMatrix(rng.normal(size=(n, 4)), ids, "demographic"),
    )


def test_pre_mode_fixed_dims_width(rng):
    out = assemble_hybrid(*_blocks(rng), HybridSpec(order="pre", block_dims=(4, 4, 2)))
    assert out.shape == (20, 10)


def test_row_permutation_permutes_hybrid_rows(rng):
    blocks = _blocks(rng)
    perm = rng.permutation(20)
    permuted = [FeatureMatrix(b.values[perm], tuple(np.array(b.customer_ids)[perm]), b.source) for b in blocks]
    spec = HybridSpec(block_dims=(3, 3, 2))
    a = assemble_hybrid(*blocks, spec).values
    b = assemble_hybrid(*permuted, spec).values
    np.testing.assert_allclose(b, a[perm], atol=1e-9)


# ---------------------------------------------------------------- cluster


def test_two_pairs_inertia():
    m = kmeans_fit(np.array([[0.0], [0.1], [10.0], [10.1]]), 2, seed=0, n_init=3)
    assert m.inertia == pytest.approx(0.01)


def test_distinct_points_in_own_clusters():
    x = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [0.0, 5.0]])
    m = kmeans_fit(x, 3, seed=1, n_init=5)
    assert m.inertia == pytest.approx(0.0)
    assert m.assignments[2] == m.assignments[3]


def test_silhouette_of_coincident_sets_is_zero():
    x = np.array([[1.0, 1.0]] * 3 + [[1.0, 1.0]] * 3)
    assert silhouette(x, np.array([0, 0, 0, 1, 1, 1])) == pytest.approx(0.0)


def test_random_labels_score_below_true_labels(rng):
    x = np.vstack([rng.normal(c, 0.3, size=(15, 2)) for c in (0, 6)])
    truth = np.repeat([0, 1], 15)
    assert silhouette(x, rng.permutation(truth)) < silhouette(x, truth)


def test_two_singletons_have_zero_dbi():
    assert davies_bouldin(np.array([[0.0], [4.0]]), np.array([0, 1])) == 0.0


def test_merging_clusters_raises_dbi(rng):
    x = np.vstack([rng.normal(c, 0.3, size=(10, 2)) for c in ((0, 0), (6, 0), (0, 6))])
    truth = np.repeat([0, 1, 2], 10)
    merged = np.where(truth == 2, 1, truth)
    assert davies_bouldin(x, merged) > davies_bouldin(x, truth)


def test_linear_decay_picks_smallest_interior_k():
    assert elbow_from_inertias([1, 2, 3, 4, 5], [50, 40, 30, 20, 10]) == 2


def test_same_matrix_under_two_names(rng):
    x = rng.normal(size=(24, 3))
    ids = tuple(f"C{i}" for i in range(24))
    grid = evaluate_grid({"lstm": FeatureMatrix(x, ids, "lstm"), "dtw": FeatureMatrix(x.copy(), ids, "dtw")}, [2, 3], seed=4, n_init=3)
    for a, b in zip(grid.column("lstm"), grid.column("dtw")):
        assert (a.sc, a.dbi) == (b.sc, b.dbi)


def test_ari_of_relabelled_partition_is_one():
    assert adjusted_rand_index([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]) == pytest.approx(1.0)


def test_hybrid_beats_single_methods_at_planted_k(shipped_run):
    _, _, outdir, _ = shipped_run
    rows = [line.split(",") for line in (outdir / "metrics.csv").read_text().splitlines()[1:]]
    sc = {r[0]: float(r[2]) for r in rows if r[1] == "3"}
    assert all(sc["hybrid"] >= sc[m] for m in ("lstm", "dtw", "rfm"))


# ---------------------------------------------------------------- seq2seq


def test_zero_weight_cell():
    p = LstmCellParams(np.zeros((8, 4)), np.zeros((8, 2)), np.zeros(8))
    h, c = lstm_cell_forward(np.ones(4), np.zeros(2), np.zeros(2), p)
    np.testing.assert_array_equal(h, 0)
    np.testing.assert_array_equal(c, 0)
    h, c = lstm_cell_forward(np.ones(4), np.zeros(2), np.ones(2), p)
    np.testing.assert_allclose(c, 0.5)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5))


SMALL = TrainConfig(hidden_size=4, encoder_layers=1, decoder_layers=1, dense_size=4, latent_dim=2, epochs=0, split=(1.0, 0.0, 0.0))


def test_length_one_sequence_has_one_state(rng):
    out = encode(rng.normal(size=(1, 4)), 1, init_params(SMALL, rng), SMALL)
    assert out.hidden_states.shape == (1, 4)


def test_attention_weights_single_and_tied():
    np.testing.assert_allclose(attention_weights(np.ones(3), np.ones((1, 3))), [1.0])
    np.testing.assert_allclose(attention_weights(np.ones(3), np.array([[1.0, 2.0, 3.0]] * 2)), [0.5, 0.5])


def test_zero_epochs_return_initial_params(rng):
    batch = PaddedSequenceBatch.from_rows([rng.normal(size=(n, 4)) for n in (3, 4, 5)])
    result = train(batch, SMALL)
    expected = init_params(SMALL, np.random.default_rng(np.random.SeedSequence(SMALL.seed).spawn(2)[0]))
    for name, v in expected.items():
        np.testing.assert_array_equal(result.params[name], v)
    assert len(result.history) == 1


def test_loss_ignores_trailing_padding(rng):
    params = init_params(SMALL, rng)
    rows = [rng.normal(size=(n, 4)) for n in (2, 4)]
    tight = ModelBatch.from_padded(PaddedSequenceBatch.from_rows(rows))
    wide = ModelBatch.from_padded(PaddedSequenceBatch.from_rows(rows, max_len=9))
    assert batch_loss(params, SMALL, tight) == pytest.approx(batch_loss(params, SMALL, wide), abs=1e-14)


def test_duplicate_customer_duplicate_latent(rng):
    rows = [rng.normal(size=(n, 4)) for n in (3, 5)]
    rows.append(rows[0].copy())
    feats = extract_features(PaddedSequenceBatch.from_rows(rows), init_params(SMALL, rng), SMALL).values
    np.testing.assert_array_equal(feats[0], feats[2])


def test_zero_model_gradient_only_on_output_bias(rng):
    mb = ModelBatch.from_padded(PaddedSequenceBatch.from_rows([rng.normal(size=(n, 4)) for n in (2, 3)]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, grads = loss_and_grads(zero_params(SMALL), SMALL, mb)
    for name, g in grads.items():
        if name == "out.b":
            assert np.any(g != 0)
        else:
            np.testing.assert_array_equal(g, 0, err_msg=name)
