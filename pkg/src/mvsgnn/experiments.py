"""Variance experiments at a fixed parameter snapshot."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import solver
from .config import TrainConfig, build_dataset, build_laplacian, loss_mode_for
from .errors import ConfigError
from .gcn import AdamState, ModelParams, adam_step, full_gradient_oracle, init_params
from .graph import GraphDataset, SparseMatrix
from .history import HistoryStore
from .samplers import make_rng
from .variance import (
    SamplerSpec,
    VarianceReport,
    average_degree,
    bound_ingredients,
    max_row_norm,
    mc_embedding_variance,
    mc_gradient_mse,
    per_sample_grad_norms_exact,
)

VARIANCE_HEADER = ("strategy", "layer", "v_hat", "v_se", "bias_hat", "grad_var_hat", "total_mse_hat",
                   "D", "beta", "delta_gamma", "bound", "trials", "seed")

# uniform: Bernoulli(B/N) exact inference, the equal-expected-size comparator
# uniform_wor: B without replacement, exact inference
# mvs: exact or history per cfg.exact_inference
VARIANCE_STRATEGIES = ("uniform", "uniform_wor", "node_wise", "layer_wise", "subgraph",
                       "mvs", "mvs_exact", "mvs_history")


@dataclass
class Snapshot:
    """Parameters after warm-up plus a history store that is ``K`` steps stale."""

    params: ModelParams
    store: HistoryStore
    dataset: GraphDataset
    L: SparseMatrix
    mode: str
    g_true: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def cv(self) -> float:
        return float(self.g_true.std() / self.g_true.mean())


def warm_snapshot(cfg: TrainConfig, dataset: Optional[GraphDataset] = None) -> Snapshot:
    """Full-batch Adam for ``cfg.warmup`` steps; history is built from the
    parameters min(K, warmup) steps before the end."""
    ds = build_dataset(cfg) if dataset is None else dataset
    L = build_laplacian(cfg, ds)
    mode = loss_mode_for(cfg, ds)
    dims = (ds.features.shape[1],) + (cfg.hidden,) * (cfg.layers - 1) + (ds.n_classes,)
    params = init_params(dims, cfg.aggregation, make_rng(cfg.seed, 0))
    adam = AdamState.for_params(params, lr=cfg.lr)
    lag = min(cfg.K, cfg.warmup)
    stale_params = params
    for t in range(cfg.warmup):
        if t == cfg.warmup - lag:
            stale_params = params
        params, adam = adam_step(params, full_gradient_oracle(params, ds, L, mode), adam)
    if lag == 0:
        stale_params = params
    store = HistoryStore.from_full_forward(stale_params, ds.features, L)
    g = per_sample_grad_norms_exact(params, ds, L, mode)
    return Snapshot(params, store, ds, L, mode, g)


def spec_for(name: str, cfg: TrainConfig, snap: Snapshot) -> SamplerSpec:
    B = cfg.batch_size
    if name == "uniform":
        return SamplerSpec("exact_bernoulli", B, name="uniform")
    if name == "uniform_wor":
        return SamplerSpec("uniform", B, name="uniform_wor")
    if name == "node_wise":
        return SamplerSpec("node_wise", B, s=cfg.s)
    if name == "layer_wise":
        sizes = tuple(cfg.layer_sizes) if cfg.layer_sizes else ()
        return SamplerSpec("layer_wise", B, layer_sizes=sizes, dist=cfg.layer_dist)
    if name == "subgraph":
        return SamplerSpec("subgraph", B)
    if name in ("mvs", "mvs_exact", "mvs_history"):
        probs = solver.optimal_probs(snap.g_true, B).probs
        exact = cfg.exact_inference if name == "mvs" else name == "mvs_exact"
        return SamplerSpec("exact_bernoulli" if exact else "history", B, probs=probs, name=name)
    raise ConfigError("strategies", f"unknown strategy {name!r}; choose from {', '.join(VARIANCE_STRATEGIES)}")


def measure(spec: SamplerSpec, snap: Snapshot, trials: int, seed: int) -> VarianceReport:
    """Gradient MSE split plus per-layer embedding variance and the history bound."""
    rep = mc_gradient_mse(spec, snap.params, snap.dataset, snap.L, snap.mode, trials, seed, snap.store)
    n_layers = snap.params.n_layers
    rep.D = average_degree(snap.L)
    rep.beta = np.full(n_layers, max_row_norm(snap.L))
    if spec.is_exact:
        # exact inference reproduces every layer exactly
        rep.v_hat = np.zeros(n_layers)
        rep.v_se = np.zeros(n_layers)
    else:
        v, se = np.empty(n_layers), np.empty(n_layers)
        for ell in range(1, n_layers + 1):
            v[ell - 1], se[ell - 1] = mc_embedding_variance(spec, snap.params, snap.dataset, snap.L, ell,
                                                            trials, seed, snap.store)
        rep.v_hat, rep.v_se = v, se
    if spec.kind == "history":
        b = bound_ingredients(snap.dataset, snap.L, snap.params, snap.store)
        rep.delta_gamma, rep.bound = b.delta_gamma, b.bound
    else:
        rep.delta_gamma = np.full(n_layers, np.nan)
        rep.bound = np.full(n_layers, np.nan)
    return rep


def run_variance_experiment(cfg: TrainConfig, strategies: Optional[Sequence[str]] = None,
                            trials: Optional[int] = None, dataset: Optional[GraphDataset] = None,
                            snapshot: Optional[Snapshot] = None) -> list[VarianceReport]:
    cfg.validate()
    names = list(strategies or cfg.strategies or ["uniform", "mvs"])
    trials = cfg.trials if trials is None else trials
    if trials < 2:
        raise ConfigError("trials", "must be >= 2")
    snap = warm_snapshot(cfg, dataset) if snapshot is None else snapshot
    if cfg.batch_size > snap.dataset.train_ids.size:
        raise ConfigError("batch_size", "exceeds the training set")
    specs = [spec_for(n, cfg, snap) for n in names]
    return [measure(s, snap, trials, cfg.seed) for s in specs]


def variance_csv_text(reports: Sequence[VarianceReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=VARIANCE_HEADER, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        for row in rep.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def write_variance_csv(reports, path) -> None:
    Path(path).write_text(variance_csv_text(reports))
