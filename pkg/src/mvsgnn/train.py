"""End-to-end training loops for every sampling strategy."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bandit as bd
from .config import TrainConfig, build_dataset, build_laplacian, loss_mode_for
from .errors import ConfigError
from .gcn import (
    AdamState,
    ModelParams,
    adam_step,
    backward,
    exact_embeddings,
    forward,
    full_gradient_oracle,
    init_params,
    loss_and_output_grad,
    per_sample_grad_norms,
    raw_output_grad,
)
from .graph import GraphDataset, SparseMatrix
from .history import HistoryStore, refresh_from_tape
from .samplers import (
    CheckpointState,
    checkpoint_size,
    importance_plan,
    layer_wise_plan,
    make_rng,
    mvs_checkpoint,
    mvs_minibatch,
    node_wise_plan,
    subgraph_plan,
    uniform_batch,
    uniform_ids,
)

METRICS_HEADER = ("step", "loss", "val_metric", "test_metric", "grad_var", "wall_ms")

# substream tags for make_rng(seed, tag, step)
_INIT, _SAMPLE, _CHECKPOINT = 0, 1, 2


def f1_micro(pred, true, mode: str) -> float:
    """Micro-averaged F1. Single-label inputs are class ids (equals accuracy);
    multi-label inputs are binary matrices."""
    p = np.asarray(pred)
    t = np.asarray(true)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} vs label shape {t.shape}")
    if p.size == 0:
        return 0.0
    if mode == "single":
        return float(np.mean(p == t))
    if mode != "multi":
        raise ValueError(f"unknown mode {mode!r}")
    p = p.astype(bool)
    t = t.astype(bool)
    tp = np.sum(p & t)
    fp = np.sum(p & ~t)
    fn = np.sum(~p & t)
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 1.0


def predict(logits: np.ndarray, mode: str) -> np.ndarray:
    if mode == "single":
        return np.argmax(logits, axis=1)
    return (logits > 0).astype(np.int64)  # sigmoid(z) > 0.5


def evaluate(params: ModelParams, dataset: GraphDataset, L: SparseMatrix) -> tuple[float, float]:
    logits = exact_embeddings(params, dataset.features, L)[-1][1]
    pred = predict(logits, dataset.label_mode)
    out = []
    for ids in (dataset.val_ids, dataset.test_ids):
        out.append(f1_micro(pred[ids], dataset.labels[ids], dataset.label_mode))
    return out[0], out[1]


@dataclass
class EarlyStopper:
    """Stops once the best validation metric has not risen by more than
    ``threshold`` for ``patience`` consecutive evaluations (0 disables)."""

    patience: int
    threshold: float = 0.01
    best: float = -math.inf
    since: int = 0

    def update(self, metric: float) -> bool:
        if metric > self.best + self.threshold:
            self.best = metric
            self.since = 0
        else:
            self.since += 1
        return self.patience > 0 and self.since >= self.patience


@dataclass
class MetricsRow:
    step: int
    loss: float
    val_metric: float
    test_metric: float
    grad_var: Optional[float] = None
    wall_ms: Optional[float] = None

    def cells(self) -> list:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [str(self.step), fmt(self.loss), fmt(self.val_metric), fmt(self.test_metric),
                fmt(self.grad_var), fmt(self.wall_ms)]


@dataclass
class TrainResult:
    params: ModelParams
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()


class _Runner:
    """Shared state of one training run; ``step_*`` methods return (loss, GradBundle)."""

    def __init__(self, cfg: TrainConfig, dataset: GraphDataset, L: SparseMatrix):
        self.cfg = cfg
        self.ds = dataset
        self.L = L
        self.mode = loss_mode_for(cfg, dataset)
        self.train_ids = dataset.train_ids
        n_train = self.train_ids.size
        if n_train == 0:
            raise ConfigError("dataset", "no training nodes")
        if cfg.batch_size > n_train:
            raise ConfigError("batch_size", f"exceeds the {n_train} training nodes")
        if cfg.strategy == "mvs" and cfg.batch_size > checkpoint_size(n_train, cfg.gamma):
            raise ConfigError("batch_size", "exceeds the checkpoint size round(N * gamma)")
        dims = (dataset.features.shape[1],) + (cfg.hidden,) * (cfg.layers - 1) + (dataset.n_classes,)
        self.params = init_params(dims, cfg.aggregation, make_rng(cfg.seed, _INIT))
        self.adam = AdamState.for_params(self.params, lr=cfg.lr)
        if cfg.history_init == "full_forward":
            self.store = HistoryStore.from_full_forward(self.params, dataset.features, L)
        else:
            self.store = HistoryStore.empty(dataset.features, dims[1:-1])
        self.ckpt = CheckpointState(cfg.gamma, cfg.K)
        self.bandit: Optional[bd.BanditState] = None
        if cfg.strategy == "mvs_bandit":
            self.bandit = bd.BanditState.uniform(n_train, cfg.batch_size, cfg.eta, cfg.bandit_delta or 1.0)

    # -- plans

    def _labels(self, plan):
        return self.ds.labels[plan.batch_nodes]

    def _run(self, plan, history=None):
        tape = forward(self.params, plan, self.ds.features, history)
        loss, dz = loss_and_output_grad(tape, self._labels(plan), self.mode)
        return tape, loss, backward(self.params, tape, dz)

    def _row_norms(self, tape, plan) -> np.ndarray:
        raw = raw_output_grad(tape.logits, self._labels(plan), self.mode)
        return per_sample_grad_norms(tape, raw, self.cfg.norm_source)

    def step_baseline(self, step: int):
        cfg, L, depth = self.cfg, self.L, self.cfg.layers
        rng = make_rng(cfg.seed, _SAMPLE, step)
        if cfg.strategy == "uniform":
            plan = uniform_batch(L, self.train_ids, cfg.batch_size, depth, rng)
        else:
            batch = uniform_ids(self.train_ids, cfg.batch_size, rng)
            if cfg.strategy == "node_wise":
                plan = node_wise_plan(L, batch, cfg.s, depth, rng)
            elif cfg.strategy == "layer_wise":
                sizes = cfg.layer_sizes or [cfg.batch_size] * depth
                plan = layer_wise_plan(L, batch, sizes, cfg.layer_dist, rng)
            else:
                plan = subgraph_plan(L, batch, depth)
        _, loss, g = self._run(plan)
        return loss, g

    def step_mvs(self, step: int):
        cfg = self.cfg
        if self.ckpt.due:
            plan, self.ckpt = mvs_checkpoint(self.L, self.train_ids, cfg.layers, self.ckpt,
                                             make_rng(cfg.seed, _CHECKPOINT, step))
            tape, loss, g = self._run(plan)
            self.ckpt.fill_cache(self._row_norms(tape, plan), step)
        else:
            plan = mvs_minibatch(self.ckpt, self.L, cfg.batch_size, cfg.layers, cfg.exact_inference,
                                 make_rng(cfg.seed, _SAMPLE, step))
            tape, loss, g = self._run(plan, None if cfg.exact_inference else self.store)
            self.ckpt.k += 1
        self.ckpt.step = step
        if cfg.layers > 1:
            refresh_from_tape(self.store, tape, step)
        return loss, g

    def step_bandit(self, step: int):
        cfg, st = self.cfg, self.bandit
        p = bd.current_probs(st)
        plan = importance_plan(self.L, self.train_ids, p, cfg.batch_size, cfg.layers, cfg.exact_inference,
                               make_rng(cfg.seed, _SAMPLE, step), strategy="mvs_bandit")
        tape, loss, g = self._run(plan, None if cfg.exact_inference else self.store)
        local = np.searchsorted(self.train_ids, plan.batch_nodes)
        g2 = self._row_norms(tape, plan) ** 2
        if cfg.bandit_delta is None and step == 0:
            # step size from an unbiased estimate of sum_i g_i^2 over all candidates
            total = float(np.sum(g2 / plan.inclusion_probs))
            delta = math.sqrt(cfg.eta**4 * math.log(st.n) / (cfg.max_iters * max(total, 1e-300)))
            st = bd.BanditState(st.weights, st.eta, delta, st.budget, st.step)
        self.bandit = bd.bandit_update(st, local, g2, plan.inclusion_probs)
        if cfg.layers > 1 and not cfg.exact_inference:
            refresh_from_tape(self.store, tape, step)
        return loss, g

    def step(self, step: int):
        if self.cfg.strategy == "mvs":
            return self.step_mvs(step)
        if self.cfg.strategy == "mvs_bandit":
            return self.step_bandit(step)
        return self.step_baseline(step)


def run_train(cfg: TrainConfig, dataset: Optional[GraphDataset] = None, write: bool = True) -> TrainResult:
    """Train per ``cfg``; writes the metrics CSV to ``cfg.out`` when set."""
    cfg.validate()
    ds = build_dataset(cfg) if dataset is None else dataset
    L = build_laplacian(cfg, ds)
    run = _Runner(cfg, ds, L)
    res = TrainResult(run.params)
    stopper = EarlyStopper(cfg.patience, cfg.early_stop_threshold)
    stopped_at = None
    for step in range(cfg.max_iters):
        t0 = time.perf_counter()
        grad_var = None
        if cfg.track_grad_var:
            full = full_gradient_oracle(run.params, ds, L, run.mode, run.train_ids)
        loss, g = run.step(step)
        if cfg.track_grad_var:
            grad_var = g.sq_dist(full)
        run.params, run.adam = adam_step(run.params, g, run.adam)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.record_time else None
        val, test = evaluate(run.params, ds, L)
        res.rows.append(MetricsRow(step, loss, val, test, grad_var, wall))
        if stopper.update(val):
            stopped_at = step
            break
    res.params = run.params
    last = res.rows[-1]
    res.summary = dict(
        strategy=cfg.strategy, steps=len(res.rows), final_loss=last.loss, final_val=last.val_metric,
        final_test=last.test_metric, best_val=max(r.val_metric for r in res.rows), early_stopped=stopped_at,
    )
    if write and cfg.out:
        Path(cfg.out).write_text(res.csv_text())
    return res
