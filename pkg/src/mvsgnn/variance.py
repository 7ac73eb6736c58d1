"""Monte-Carlo measurement of embedding and gradient variance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import solver
from .errors import RegimeViolation
from .gcn import (
    GradBundle,
    ModelParams,
    backward,
    exact_embeddings,
    forward,
    full_gradient_oracle,
    loss_and_output_grad,
    raw_output_grad,
)
from .graph import GraphDataset, SparseMatrix
from .history import HistoryStore, combined_aggregate, staleness_report
from .samplers import (
    MiniBatchPlan,
    exact_plan,
    full_plan,
    importance_plan,
    layer_wise_plan,
    make_rng,
    node_wise_plan,
    subgraph_plan,
    uniform_ids,
)

EXACT_KINDS = ("uniform", "exact_bernoulli")


@dataclass(frozen=True, eq=False)
class SamplerSpec:
    """How to draw one plan. ``kind`` is one of

    uniform           B without replacement, exact inference
    node_wise         uniform batch, s neighbours per node
    layer_wise        uniform batch, layer_sizes i.i.d. draws per layer
    subgraph          uniform batch, induced subgraph at every layer
    exact_bernoulli   Bernoulli(probs) batch, exact inference
    history           Bernoulli(probs) batch, fresh batch columns + stale history
    """

    kind: str
    B: int
    s: int = 5
    layer_sizes: tuple = ()
    dist: str = "uniform"
    probs: Optional[np.ndarray] = None
    candidates: Optional[np.ndarray] = None
    name: Optional[str] = None

    @property
    def label(self) -> str:
        return self.name or self.kind

    @property
    def is_exact(self) -> bool:
        return self.kind in EXACT_KINDS

    def cands(self, dataset: GraphDataset) -> np.ndarray:
        return dataset.train_ids if self.candidates is None else np.asarray(self.candidates)

    def draw(self, L: SparseMatrix, dataset: GraphDataset, depth: int, seed) -> MiniBatchPlan:
        cand = self.cands(dataset)
        if self.kind in ("exact_bernoulli", "history"):
            p = np.full(cand.size, self.B / cand.size) if self.probs is None else self.probs
            return importance_plan(L, cand, p, self.B, depth, self.kind == "exact_bernoulli", seed,
                                   strategy=self.label)
        rng = make_rng(seed)
        batch = uniform_ids(cand, self.B, rng)
        if self.kind == "uniform":
            return exact_plan(L, batch, depth, np.full(batch.size, self.B / cand.size), strategy="uniform")
        if self.kind == "node_wise":
            return node_wise_plan(L, batch, self.s, depth, rng)
        if self.kind == "layer_wise":
            sizes = self.layer_sizes or (self.B,) * depth
            return layer_wise_plan(L, batch, sizes, self.dist, rng)
        if self.kind == "subgraph":
            return subgraph_plan(L, batch, depth)
        raise ValueError(f"unknown sampler kind {self.kind!r}")


def _mean_se(vals) -> tuple[float, float]:
    v = np.asarray(vals, dtype=np.float64)
    mean = math.fsum(v) / v.size
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return mean, se


@dataclass
class VarianceReport:
    strategy: str
    trials: int
    seed: int
    v_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_se: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias_hat: float = float("nan")
    bias_se: float = float("nan")
    grad_var_hat: float = float("nan")
    grad_var_se: float = float("nan")
    total_mse_hat: float = float("nan")
    total_mse_se: float = float("nan")
    cross_hat: float = float("nan")
    D: float = float("nan")
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta_gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bound: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def rows(self) -> list[dict]:
        """One CSV row per layer."""
        out = []
        n = max(len(self.v_hat), len(self.bound), 1)
        for k in range(n):
            pick = lambda a: float(a[k]) if k < len(a) else float("nan")
            out.append(
                dict(
                    strategy=self.strategy, layer=k + 1,
                    v_hat=pick(self.v_hat), v_se=pick(self.v_se),
                    bias_hat=self.bias_hat, grad_var_hat=self.grad_var_hat,
                    total_mse_hat=self.total_mse_hat, D=self.D,
                    beta=pick(self.beta), delta_gamma=pick(self.delta_gamma),
                    bound=pick(self.bound), trials=self.trials, seed=self.seed,
                )
            )
        return out


def _layer_output(params: ModelParams, lp, exact_in: np.ndarray, store, ell: int, features) -> np.ndarray:
    """Pre-activation of layer ``ell`` on ``lp`` with exact inputs at layer ell-1."""
    h = exact_in[lp.cols]
    agg = combined_aggregate(lp.fresh, h, lp.stale if lp.has_stale else None, lp.stale_cols, store, ell,
                             features=features)
    if params.aggregation == "concat":
        agg = np.hstack([exact_in[lp.rows], agg])
    return agg @ params.weights[ell - 1]


def embedding_error(params, plan: MiniBatchPlan, ell: int, features, emb, store=None) -> float:
    """Per-row squared error of layer ``ell`` under the one-layer perturbation."""
    lp = plan.layers[ell - 1]
    exact_in = features if ell == 1 else emb[ell - 2][1]
    z = _layer_output(params, lp, exact_in, store, ell, features)
    d = z - emb[ell - 1][0][lp.rows]
    return float(np.sum(d * d) / lp.rows.size)


def mc_embedding_variance(spec: SamplerSpec, params: ModelParams, dataset: GraphDataset, L: SparseMatrix,
                          layer: int, trials: int, seed: int = 0, store: Optional[HistoryStore] = None,
                          emb=None) -> tuple[float, float]:
    """Mean and standard error of the per-row squared layer error over ``trials`` plans."""
    if trials < 2:
        raise ValueError("need at least two trials")
    x = dataset.features
    emb = exact_embeddings(params, x, L) if emb is None else emb
    vals = np.empty(trials)
    for t in range(trials):
        plan = spec.draw(L, dataset, params.n_layers, make_rng(seed, t))
        vals[t] = embedding_error(params, plan, layer, x, emb, store)
    return _mean_se(vals)


def gradient_pair(spec: SamplerSpec, params, dataset, L, mode, seed, store=None):
    """(g_tilde, g) for one draw: sampled embeddings vs exact ones on the same batch and weights."""
    plan = spec.draw(L, dataset, params.n_layers, seed)
    y = dataset.labels[plan.batch_nodes]
    tape = forward(params, plan, dataset.features, store)
    _, dz = loss_and_output_grad(tape, y, mode)
    g_tilde = backward(params, tape, dz)
    if spec.is_exact:
        return g_tilde, g_tilde
    ex = exact_plan(L, plan.batch_nodes, params.n_layers, plan.inclusion_probs, plan.weights, plan.norm)
    tape_ex = forward(params, ex, dataset.features)
    _, dz_ex = loss_and_output_grad(tape_ex, y, mode)
    return g_tilde, backward(params, tape_ex, dz_ex)


def mc_gradient_mse(spec: SamplerSpec, params: ModelParams, dataset: GraphDataset, L: SparseMatrix,
                    mode: str, trials: int, seed: int = 0, store: Optional[HistoryStore] = None,
                    full_grad: Optional[GradBundle] = None) -> VarianceReport:
    if trials < 2:
        raise ValueError("need at least two trials")
    fg = full_gradient_oracle(params, dataset, L, mode, spec.cands(dataset)) if full_grad is None else full_grad
    bias, var, tot, cross = (np.empty(trials) for _ in range(4))
    for t in range(trials):
        gt, g = gradient_pair(spec, params, dataset, L, mode, make_rng(seed, t), store)
        bias[t] = gt.sq_dist(g)
        var[t] = g.sq_dist(fg)
        tot[t] = gt.sq_dist(fg)
        cross[t] = tot[t] - bias[t] - var[t]
    rep = VarianceReport(spec.label, trials, seed)
    rep.bias_hat, rep.bias_se = _mean_se(bias)
    rep.grad_var_hat, rep.grad_var_se = _mean_se(var)
    rep.total_mse_hat, rep.total_mse_se = _mean_se(tot)
    rep.cross_hat = _mean_se(cross)[0]
    return rep


def per_sample_grad_norms_exact(params: ModelParams, dataset: GraphDataset, L: SparseMatrix, mode,
                                ids=None) -> np.ndarray:
    """||grad_theta phi_i|| over all weights with exact embeddings, aligned with sorted ``ids``."""
    ids = dataset.train_ids if ids is None else np.unique(ids)
    plan = full_plan(L, ids, params.n_layers)
    tape = forward(params, plan, dataset.features)
    raw = raw_output_grad(tape.logits, dataset.labels[plan.batch_nodes], mode)
    out = np.empty(raw.shape[0])
    for i in range(raw.shape[0]):
        d = np.zeros_like(raw)
        d[i] = raw[i]
        out[i] = math.sqrt(sum(float(np.sum(g * g)) for g in backward(params, tape, d).grads))
    return out


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    abs_err: float
    g_used: np.ndarray


def us_is_identity_check(g_bar, B) -> IdentityCheck:
    """G(uniform) - G(p_is) against (sum g)^2 / (B^3 N) ||p_is - p_us||^2."""
    g = solver.uplift_smallest(g_bar, B)
    pv = solver.optimal_probs(g, B)
    if pv.kappa != g.size:
        raise RegimeViolation(f"kappa={pv.kappa} < N={g.size} after uplift")
    n = g.size
    p_us = np.full(n, B / n)
    lhs = solver.G_value(g, p_us) - solver.G_value(g, pv.probs)
    rhs = float(g.sum() ** 2 / (B**3 * n) * np.sum((pv.probs - p_us) ** 2))
    return IdentityCheck(lhs, rhs, abs(lhs - rhs), g)


def average_degree(L: SparseMatrix) -> float:
    return L.nnz / L.n_rows


def max_row_norm(L: SparseMatrix) -> float:
    sq = np.bincount(L.row_ids, weights=L.values**2, minlength=L.n_rows)
    return float(np.sqrt(sq.max()))


@dataclass(frozen=True)
class BoundIngredients:
    D: float
    beta: np.ndarray
    delta_gamma: np.ndarray
    bound: np.ndarray
    v_hat: Optional[np.ndarray] = None
    v_se: Optional[np.ndarray] = None


def bound_ingredients(dataset: GraphDataset, L: SparseMatrix, params: ModelParams, store: HistoryStore,
                      spec: Optional[SamplerSpec] = None, trials: int = 0, seed: int = 0) -> BoundIngredients:
    """D * beta^2 * delta_gamma^2 per layer, optionally with the measured variance under ``spec``."""
    emb = exact_embeddings(params, dataset.features, L)
    hidden = [h for _, h in emb[:-1]]
    rep = staleness_report(store, 0, params, hidden)
    n_layers = params.n_layers
    D = average_degree(L)
    beta = np.full(n_layers, max_row_norm(L))
    dgam = np.concatenate([[0.0], rep.per_layer_delta])  # layer 1 reads exact features
    bound = D * beta**2 * dgam**2
    if spec is None or trials < 2:
        return BoundIngredients(D, beta, dgam, bound)
    v = np.empty(n_layers)
    se = np.empty(n_layers)
    for ell in range(1, n_layers + 1):
        v[ell - 1], se[ell - 1] = mc_embedding_variance(spec, params, dataset, L, ell, trials, seed, store, emb)
    return BoundIngredients(D, beta, dgam, bound, v, se)
