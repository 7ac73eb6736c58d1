import numpy as np
import pytest

from mvsgnn.errors import CoverageGap, DimensionMismatch
from mvsgnn.gcn import exact_embeddings, forward, init_params
from mvsgnn.graph import normalize_laplacian, restrict, spmm
from mvsgnn.history import HistoryStore, check_coverage, combined_aggregate, refresh_from_tape, staleness_report
from mvsgnn.samplers import exact_plan, full_plan, importance_plan

from conftest import random_dataset


@pytest.fixture
def setup():
    ds = random_dataset(n=14, f=4, c=3, seed=2)
    L = normalize_laplacian(ds.adjacency)
    params = init_params((4, 6, 5, 3), "plain", 1)
    return ds, L, params


def test_full_refresh_equals_exact(setup):
    ds, L, params = setup
    store = HistoryStore.empty(ds.features, (6, 5))
    assert store.size == 14 * 11
    tape = forward(params, full_plan(L, np.arange(14), 3), ds.features)
    refresh_from_tape(store, tape, 3)
    emb = exact_embeddings(params, ds.features, L)
    for k in range(2):
        assert np.allclose(store.tables[k], emb[k][1], atol=1e-12)
    snap = store.clone()
    refresh_from_tape(store, tape, 3)
    assert all(np.array_equal(a, b) for a, b in zip(store.tables, snap.tables))
    rep = staleness_report(store, 3, params, [emb[0][1], emb[1][1]])
    assert rep.max_staleness == 0 and np.allclose(rep.per_layer_delta, 0, atol=1e-12)
    assert store.size == 14 * 11


def test_partial_refresh_isolation(setup):
    ds, L, params = setup
    store = HistoryStore.empty(ds.features, (6, 5))
    store.tables[0][:] = 7.0
    before = store.clone()
    tape = forward(params, exact_plan(L, [3], 3), ds.features)
    refresh_from_tape(store, tape, 5)
    touched = np.unique(np.concatenate([lp.rows for lp in tape.plan.layers[:2]]))
    untouched = np.setdiff1d(np.arange(14), touched)
    for k in range(2):
        assert np.array_equal(store.tables[k][untouched], before.tables[k][untouched])
    assert np.all(store.freshness[untouched] == -1)
    assert np.all(store.freshness[touched] == 5)


def test_refresh_shape_mismatch(setup):
    ds, L, params = setup
    store = HistoryStore.empty(ds.features, (6,))
    tape = forward(params, exact_plan(L, [3], 3), ds.features)
    with pytest.raises(DimensionMismatch):
        refresh_from_tape(store, tape, 0)


def test_combined_aggregate(setup):
    ds, L, params = setup
    emb = exact_embeddings(params, ds.features, L)
    store = HistoryStore.from_full_forward(params, ds.features, L)
    rows = np.array([0, 4, 9])
    rng = np.random.default_rng(0)
    fresh_cols = np.sort(rng.choice(14, 7, replace=False))
    stale_cols = np.setdiff1d(np.arange(14), fresh_cols)
    Lf, _, _ = restrict(L, rows, fresh_cols)
    Ls, _, _ = restrict(L, rows, stale_cols)
    H = emb[0][1]
    # exact history collapses to L H
    out = combined_aggregate(Lf, H[fresh_cols], Ls, stale_cols, store, 2)
    assert np.allclose(out, spmm(L, H)[rows], rtol=0, atol=1e-12)
    # different fresh and stale contents: dense slice oracle
    Hf = rng.normal(size=(7, 6))
    stacked = np.zeros((14, 6))
    stacked[fresh_cols] = Hf
    stacked[stale_cols] = store.tables[0][stale_cols]
    out = combined_aggregate(Lf, Hf, Ls, stale_cols, store, 2)
    assert np.allclose(out, L.to_dense()[rows] @ stacked, atol=1e-12)
    assert np.array_equal(combined_aggregate(Lf, Hf, None, None, store, 2), spmm(Lf, Hf))
    check_coverage(L, rows, fresh_cols, stale_cols)
    with pytest.raises(CoverageGap):
        check_coverage(L, np.arange(14), fresh_cols[:2], None)


def test_mvs_history_plan_collapses(setup):
    ds, L, params = setup
    store = HistoryStore.from_full_forward(params, ds.features, L)
    want = exact_embeddings(params, ds.features, L)[-1][1]
    plan = importance_plan(L, np.arange(14), np.full(14, 0.3), 4, 3, False, 5)
    assert plan.has_stale
    for lp in plan.layers:
        check_coverage(L, lp.rows, lp.cols, lp.stale_cols)
    got = forward(params, plan, ds.features, store).logits
    assert np.allclose(got, want[plan.batch_nodes], rtol=0, atol=1e-12)


def test_zeros_history_delta(setup):
    ds, L, params = setup
    store = HistoryStore.empty(ds.features, (6, 5))
    emb = exact_embeddings(params, ds.features, L)
    hidden = [emb[0][1], emb[1][1]]
    rep = staleness_report(store, 4, params, hidden)
    assert rep.max_staleness == 5
    for k in range(2):
        want = np.linalg.norm(hidden[k] @ params.weights[k + 1], axis=1).max()
        assert rep.per_layer_delta[k] == pytest.approx(want)


def test_drift_grows_with_perturbation(setup):
    ds, L, params = setup
    store = HistoryStore.from_full_forward(params, ds.features, L)
    rng = np.random.default_rng(3)
    noise = [rng.normal(size=w.shape) for w in params.weights]
    deltas = []
    for eps in (0.0, 0.01, 0.05, 0.2):
        moved = params.with_weights([w + eps * n for w, n in zip(params.weights, noise)])
        emb = exact_embeddings(moved, ds.features, L)
        deltas.append(staleness_report(store, 0, moved, [emb[0][1], emb[1][1]]).per_layer_delta.max())
    assert deltas[0] == pytest.approx(0, abs=1e-12)
    assert all(a < b for a, b in zip(deltas, deltas[1:]))


def test_concat_delta_uses_aggregation_half(setup):
    ds, L, _ = setup
    params = init_params((4, 6, 3), "concat", 0)
    store = HistoryStore.empty(ds.features, (6,))
    h = exact_embeddings(params, ds.features, L)[0][1]
    rep = staleness_report(store, 0, params, [h])
    want = np.linalg.norm(h @ params.weights[1][6:], axis=1).max()
    assert rep.per_layer_delta[0] == pytest.approx(want)
