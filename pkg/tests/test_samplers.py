import numpy as np
import pytest

from mvsgnn.errors import BatchTooLarge, EmptyBatch, EmptyCandidateSet, StaleCache
from mvsgnn.graph import LaplacianConfig, adjacency_from_edges, build_csr, normalize_laplacian, spmm
from mvsgnn.samplers import (
    CheckpointState, bernoulli_draw, checkpoint_size, exact_plan, importance_plan, layer_wise_plan,
    mvs_checkpoint, mvs_minibatch, node_wise_plan, subgraph_plan, uniform_batch,
)

from conftest import random_graph


def mc_mean_top(make_plan, L, H, trials):
    """Mean and standard error of the top-layer L~ H, aligned with the plan rows."""
    acc = acc2 = None
    rows = None
    for t in range(trials):
        plan = make_plan(t)
        lp = plan.layers[-1]
        v = spmm(lp.fresh, H[lp.cols])
        rows = lp.rows
        acc = v if acc is None else acc + v
        acc2 = v * v if acc2 is None else acc2 + v * v
    mean = acc / trials
    var = np.maximum(acc2 / trials - mean**2, 0) * trials / (trials - 1)
    return rows, mean, np.sqrt(var / trials)


@pytest.fixture
def L20():
    return normalize_laplacian(random_graph(20, 0.3, 11))


def test_uniform_batch(L20):
    p = uniform_batch(L20, np.arange(20), 20, 2, 0)
    assert p.batch_nodes.tolist() == list(range(20)) and np.all(p.inclusion_probs == 1)
    a, b = uniform_batch(L20, np.arange(20), 5, 2, 3), uniform_batch(L20, np.arange(20), 5, 2, 3)
    assert np.array_equal(a.batch_nodes, b.batch_nodes)
    assert np.allclose(a.inclusion_probs, 0.25)
    assert not a.has_stale
    a.check()
    with pytest.raises(BatchTooLarge):
        uniform_batch(L20, np.arange(20), 21, 2, 0)


def test_uniform_frequencies():
    L = normalize_laplacian(random_graph(10, 0.3, 0))
    counts = np.zeros(10)
    trials = 5000
    for t in range(trials):
        counts[uniform_batch(L, np.arange(10), 3, 1, t).batch_nodes] += 1
    freq = counts / trials
    # 3.5 sigma per node keeps the family-wise level near 0.5% over ten nodes
    assert np.all(np.abs(freq - 0.3) <= 3.5 * np.sqrt(0.3 * 0.7 / trials))


def test_node_wise_full_neighbourhood(L20):
    batch = [0, 5, 9]
    p = node_wise_plan(L20, batch, 100, 2, 0)
    ex = exact_plan(L20, batch, 2)
    for a, b in zip(p.layers, ex.layers):
        assert np.array_equal(a.rows, b.rows) and np.array_equal(a.cols, b.cols)
        assert np.array_equal(a.fresh.to_dense(), b.fresh.to_dense())


def test_node_wise_scaling_arithmetic():
    adj = adjacency_from_edges([(0, 1), (0, 2), (0, 3), (0, 4)], 5)
    L = normalize_laplacian(adj, LaplacianConfig("rw", False))
    p = node_wise_plan(L, [0], 2, 1, 0)
    lp = p.layers[0]
    assert lp.fresh.nnz == 2 and np.allclose(lp.fresh.values, 0.5)
    p.check()


def test_node_wise_unbiased(L20):
    H = np.random.default_rng(0).normal(size=(20, 2))
    batch = np.arange(0, 20, 3)
    rows, mean, se = mc_mean_top(lambda t: node_wise_plan(L20, batch, 2, 1, t), L20, H, 4000)
    want = spmm(L20, H)[rows]
    assert np.all(np.abs(mean - want) <= 4 * se + 1e-12)


def test_layer_wise_single_candidate():
    L = normalize_laplacian(adjacency_from_edges([], 1), LaplacianConfig("rw", True))
    p = layer_wise_plan(L, [0], [1], "uniform", 0)
    assert np.array_equal(p.layers[0].fresh.to_dense(), [[1.0]])
    with pytest.raises(EmptyCandidateSet):
        layer_wise_plan(build_csr([], 2, 2), [0], [1], "uniform", 0)


@pytest.mark.parametrize("dist", ["uniform", "degree"])
def test_layer_wise_unbiased(L20, dist):
    H = np.random.default_rng(1).normal(size=(20, 2))
    batch = [2, 7, 13]
    rows, mean, se = mc_mean_top(lambda t: layer_wise_plan(L20, batch, [6], dist, t), L20, H, 4000)
    assert np.all(np.abs(mean - spmm(L20, H)[rows]) <= 4 * se + 1e-12)


def test_layer_wise_degree_equals_uniform_on_regular_graph():
    n = 8
    adj = adjacency_from_edges([(i, (i + 1) % n) for i in range(n)], n)
    L = normalize_laplacian(adj)
    for seed in range(5):
        a = layer_wise_plan(L, [0, 3], [4, 4], "uniform", seed)
        b = layer_wise_plan(L, [0, 3], [4, 4], "degree", seed)
        for x, y in zip(a.layers, b.layers):
            assert np.array_equal(x.cols, y.cols)
            assert np.allclose(x.fresh.to_dense(), y.fresh.to_dense())


def test_subgraph_plan():
    adj = adjacency_from_edges([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)], 6)
    L = normalize_laplacian(adj)
    full = subgraph_plan(L, np.arange(6), 2)
    assert np.array_equal(full.layers[0].fresh.to_dense(), L.to_dense())
    tri = subgraph_plan(L, [0, 1, 2], 2)
    assert np.array_equal(tri.layers[1].fresh.to_dense(), L.to_dense()[:3, :3])
    L2 = normalize_laplacian(adjacency_from_edges([(0, 1)], 3))
    single = subgraph_plan(L2, [2], 1)
    assert single.layers[0].fresh.to_dense().tolist() == [[1.0]]
    with pytest.raises(EmptyBatch):
        subgraph_plan(L, [], 1)


def test_checkpoint_sizes(L20):
    assert checkpoint_size(300, 0.1) == 30
    assert checkpoint_size(10, 1e-6) == 1
    st = CheckpointState(1.0, 5)
    assert st.due
    plan, st2 = mvs_checkpoint(L20, np.arange(20), 2, st, 0)
    assert np.array_equal(st2.checkpoint_nodes, np.arange(20)) and st2.k == 1
    assert np.all(plan.inclusion_probs == 1.0)
    st2.fill_cache(np.ones(20), 7)
    assert np.all(st2.freshness == 7)
    _, st3 = mvs_checkpoint(L20, np.arange(20), 2, CheckpointState(0.25, 5), 1)
    assert st3.checkpoint_nodes.size == 5
    with pytest.raises(ValueError):
        CheckpointState(0.0, 5)


def test_minibatch_requires_cache(L20):
    with pytest.raises(StaleCache):
        mvs_minibatch(CheckpointState(1.0, 3), L20, 4, 2, True, 0)


def test_minibatch_uniform_and_modes(L20):
    _, st = mvs_checkpoint(L20, np.arange(20), 2, CheckpointState(1.0, 3), 0)
    st.fill_cache(np.full(20, 2.0), 0)
    ex = mvs_minibatch(st, L20, 5, 2, True, 1)
    assert np.allclose(ex.inclusion_probs, 0.25) and not ex.has_stale
    hist = mvs_minibatch(st, L20, 5, 2, False, 1)
    assert np.array_equal(hist.batch_nodes, ex.batch_nodes)
    hist.check()
    for lp in hist.layers:
        assert np.array_equal(lp.cols, hist.batch_nodes)
        full = np.zeros((lp.rows.size, 20))
        full[:, lp.cols] = lp.fresh.to_dense()
        if lp.has_stale:
            full[:, lp.stale_cols] = lp.stale.to_dense()
        assert np.array_equal(full, L20.to_dense()[lp.rows])
    again = mvs_minibatch(st, L20, 5, 2, False, 1)
    assert np.array_equal(again.batch_nodes, hist.batch_nodes)


def test_expected_batch_size(L20):
    g = np.random.default_rng(0).gamma(0.7, size=20) + 0.01
    _, st = mvs_checkpoint(L20, np.arange(20), 1, CheckpointState(1.0, 3), 0)
    st.fill_cache(g, 0)
    p = mvs_minibatch(st, L20, 6, 1, True, 0)
    probs = _probs(g, 6)
    trials = 20000
    sizes = np.array([bernoulli_draw(probs, t).sum() for t in range(trials)])
    var = np.sum(probs * (1 - probs))
    assert abs(probs.sum() - 6) <= 1e-9
    # empty draws are retried, a negligible effect at B = 6
    assert abs(sizes.mean() - 6) <= 3 * np.sqrt(var / trials)
    assert np.all(p.weights == 6 / (20 * p.inclusion_probs))


def _probs(g, B):
    from mvsgnn.solver import optimal_probs
    return optimal_probs(g, B).probs


def test_bernoulli_retry_and_failure():
    with pytest.raises(EmptyBatch):
        bernoulli_draw(np.full(5, 1e-300), 0)
    assert bernoulli_draw(np.ones(3), 0).all()


def test_importance_plan_weights(L20):
    cand = np.arange(4, 20)
    p = np.linspace(0.1, 0.9, cand.size)
    plan = importance_plan(L20, cand, p, 5, 2, True, 0)
    pos = np.searchsorted(cand, plan.batch_nodes)
    assert np.allclose(plan.inclusion_probs, p[pos])
    assert np.allclose(plan.weights, 5 / (cand.size * p[pos]))
    assert plan.norm == 5.0
