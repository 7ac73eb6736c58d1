import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mvsgnn.graph import GraphDataset, LaplacianConfig, adjacency_from_edges, normalize_laplacian, synth_sbm

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_graph(n, p, seed, min_degree=1):
    """Erdos-Renyi graph plus a ring so no node is isolated."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    hit = rng.random(iu.size) < p
    edges = set(zip(iu[hit].tolist(), ju[hit].tolist()))
    if min_degree:
        edges |= {(min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n) if n > 1}
    return adjacency_from_edges(sorted(edges), n)


def random_dataset(n=12, f=4, c=3, seed=0, p=0.3, multi=False):
    rng = np.random.default_rng(seed)
    adj = random_graph(n, p, seed)
    x = rng.normal(size=(n, f))
    y = (rng.random((n, c)) < 0.4).astype(np.int64) if multi else rng.integers(0, c, n)
    if not multi:
        y[:c] = np.arange(c)  # every class present
    train = np.zeros(n, bool)
    train[: max(2, n // 2)] = True
    val = np.zeros(n, bool)
    val[n // 2 : n // 2 + n // 4] = True
    test = ~(train | val)
    return GraphDataset(adj, x, y, train, val, test)


@pytest.fixture
def small_ds():
    return random_dataset()


@pytest.fixture(scope="session")
def sbm():
    return synth_sbm(4, 75, 0.3, 0.02, 16, "single", 0)


@pytest.fixture(scope="session")
def sbm_L(sbm):
    return normalize_laplacian(sbm.adjacency, LaplacianConfig())


def dense_forward(weights, aggregation, L_dense, X):
    """Straight-line dense GCN: ReLU on hidden layers, linear top layer."""
    h = X
    for k, W in enumerate(weights):
        a = L_dense @ h
        if aggregation == "concat":
            a = np.hstack([h, a])
        z = a @ W
        h = np.maximum(z, 0) if k < len(weights) - 1 else z
    return h


def fd_check(params, dataset, L, mode, ids, n_coords, rng, h=1e-5):
    """Max relative error of backward() vs central differences over sampled coordinates."""
    from mvsgnn.gcn import backward, forward, loss_and_output_grad
    from mvsgnn.samplers import full_plan

    plan = full_plan(L, ids, params.n_layers)
    y = dataset.labels[plan.batch_nodes]

    def loss_of(ws):
        tape = forward(params.with_weights(ws), plan, dataset.features)
        return loss_and_output_grad(tape, y, mode)[0]

    tape = forward(params, plan, dataset.features)
    _, dz = loss_and_output_grad(tape, y, mode)
    grads = backward(params, tape, dz).grads
    coords = [(k, idx) for k, W in enumerate(params.weights) for idx in np.ndindex(W.shape)]
    pick = rng.choice(len(coords), size=min(n_coords, len(coords)), replace=False)
    worst = 0.0
    for c in pick:
        k, idx = coords[c]
        up = [w.copy() for w in params.weights]
        dn = [w.copy() for w in params.weights]
        up[k][idx] += h
        dn[k][idx] -= h
        num = (loss_of(up) - loss_of(dn)) / (2 * h)
        ana = grads[k][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN  (deselected or errored before reporting)")
            continue
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
