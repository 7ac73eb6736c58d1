"""Forward/backward passes of an L-layer GCN over mini-batch plans, plus Adam."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, LabelModeMismatch, MissingHistory
from .graph import GraphDataset, SparseMatrix, spmm, spmm_t
from .samplers import MiniBatchPlan, full_plan, make_rng

Aggregation = Literal["plain", "concat"]
LossMode = Literal["softmax_ce", "sigmoid_bce"]


@dataclass(frozen=True, eq=False)
class ModelParams:
    weights: tuple
    aggregation: Aggregation = "plain"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        if self.aggregation not in ("plain", "concat"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        k = 2 if self.aggregation == "concat" else 1
        for lo, hi in zip(self.weights[:-1], self.weights[1:]):
            if hi.shape[0] != k * lo.shape[1]:
                raise DimensionMismatch("weight shapes do not chain")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> tuple:
        k = 2 if self.aggregation == "concat" else 1
        return (self.weights[0].shape[0] // k,) + tuple(w.shape[1] for w in self.weights)

    def with_weights(self, weights) -> "ModelParams":
        return ModelParams(tuple(weights), self.aggregation)


def init_params(dims: Sequence[int], aggregation: Aggregation = "plain", seed=0) -> ModelParams:
    """Glorot-uniform weights for layer widths ``dims = (F0, F1, ..., FL)``."""
    rng = make_rng(seed)
    k = 2 if aggregation == "concat" else 1
    ws = []
    for fin, fout in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (k * fin + fout))
        ws.append(rng.uniform(-limit, limit, size=(k * fin, fout)))
    return ModelParams(tuple(ws), aggregation)


@dataclass(eq=False)
class ForwardTape:
    plan: MiniBatchPlan
    inputs: np.ndarray          # H^(0) on the plan's input nodes
    aggregates: list            # A^(l): the matrix multiplied by W^(l)
    pre: list                   # Z^(l)
    acts: list                  # H^(l); the top layer is left linear

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]

    @property
    def batch_nodes(self) -> np.ndarray:
        return self.plan.batch_nodes

    def layer_input(self, ell: int) -> np.ndarray:
        return self.inputs if ell == 1 else self.acts[ell - 2]


@dataclass(eq=False)
class GradBundle:
    grads: list
    per_sample_last: Optional[np.ndarray] = None
    loss: Optional[float] = None

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads])

    def sq_dist(self, other: "GradBundle") -> float:
        return float(sum(np.sum((a - b) ** 2) for a, b in zip(self.grads, other.grads)))


def relu(x):
    return np.maximum(x, 0.0)


def forward(params: ModelParams, plan: MiniBatchPlan, features: np.ndarray, history=None) -> ForwardTape:
    from .history import combined_aggregate

    if plan.depth != params.n_layers:
        raise DimensionMismatch(f"plan has {plan.depth} layers, model has {params.n_layers}")
    x = np.asarray(features, dtype=np.float64)
    h = x[plan.input_nodes]
    aggs, pres, acts = [], [], []
    inputs = h
    for ell, (lp, W) in enumerate(zip(plan.layers, params.weights), start=1):
        if h.shape[0] != lp.cols.size:
            raise DimensionMismatch(f"layer {ell}: input rows do not match plan columns")
        if lp.has_stale:
            if ell > 1 and history is None:
                raise MissingHistory(f"layer {ell} has stale columns but no history store")
            agg = combined_aggregate(lp.fresh, h, lp.stale, lp.stale_cols, history, ell, features=x)
        else:
            agg = spmm(lp.fresh, h)
        if params.aggregation == "concat":
            si = lp.self_idx
            if np.any(si < 0):
                raise DimensionMismatch(f"layer {ell}: concat needs every row among the inputs")
            a = np.hstack([h[si], agg])
        else:
            a = agg
        if a.shape[1] != W.shape[0]:
            raise DimensionMismatch(f"layer {ell}: width {a.shape[1]} vs weight rows {W.shape[0]}")
        z = a @ W
        h = relu(z) if ell < params.n_layers else z
        aggs.append(a)
        pres.append(z)
        acts.append(h)
    return ForwardTape(plan, inputs, aggs, pres, acts)


# ---------------------------------------------------------------- losses


def _softplus(z):
    return np.logaddexp(0.0, z)


def check_labels(labels, mode: LossMode, n_rows: int, n_out: int) -> np.ndarray:
    y = np.asarray(labels)
    if mode == "softmax_ce":
        if y.ndim != 1:
            raise LabelModeMismatch("softmax_ce expects class indices")
    elif mode == "sigmoid_bce":
        if y.ndim != 2 or y.shape[1] != n_out:
            raise LabelModeMismatch("sigmoid_bce expects an N x C binary matrix")
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    if y.shape[0] != n_rows:
        raise DimensionMismatch(f"{y.shape[0]} labels for {n_rows} batch rows")
    return y


def per_row_loss(logits, labels, mode: LossMode) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    y = check_labels(labels, mode, z.shape[0], z.shape[1])
    if mode == "softmax_ce":
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        return lse - z[np.arange(z.shape[0]), y]
    return np.mean(_softplus(z) - y * z, axis=1)


def raw_output_grad(logits, labels, mode: LossMode) -> np.ndarray:
    """Unweighted dphi/dZ for every row."""
    z = np.asarray(logits, dtype=np.float64)
    y = check_labels(labels, mode, z.shape[0], z.shape[1])
    if mode == "softmax_ce":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        g = e / e.sum(axis=1, keepdims=True)
        g[np.arange(z.shape[0]), y] -= 1.0
        return g
    return (1.0 / (1.0 + np.exp(-z)) - y) / z.shape[1]


def loss_and_output_grad(tape: ForwardTape, labels, mode: LossMode, weights=None, norm=None):
    """loss = (1/B) sum w_i phi_i and dZ row i = (w_i / B) dphi_i/dZ_i.

    ``weights`` and ``norm`` (B) default to the plan's importance weights and
    normaliser.
    """
    z = tape.logits
    w = tape.plan.weights if weights is None else np.asarray(weights, dtype=np.float64)
    B = tape.plan.norm if norm is None else float(norm)
    if np.any(w <= 0):
        raise ValueError("importance weights must be positive")
    loss = float(np.dot(w, per_row_loss(z, labels, mode)) / B)
    dz = raw_output_grad(z, labels, mode) * (w / B)[:, None]
    return loss, dz


# ---------------------------------------------------------------- backward


def backward(params: ModelParams, tape: ForwardTape, dZ_L: np.ndarray) -> GradBundle:
    """Reverse pass; history inputs are constants and receive no gradient."""
    dz = np.asarray(dZ_L, dtype=np.float64)
    if dz.shape != tape.logits.shape:
        raise DimensionMismatch(f"dZ shape {dz.shape} vs logits {tape.logits.shape}")
    n = params.n_layers
    grads = [None] * n
    for ell in range(n, 0, -1):
        a = tape.aggregates[ell - 1]
        W = params.weights[ell - 1]
        grads[ell - 1] = a.T @ dz
        if ell == 1:
            break
        lp = tape.plan.layers[ell - 1]
        da = dz @ W.T
        h_in = tape.layer_input(ell)
        if params.aggregation == "concat":
            f = h_in.shape[1]
            dh = spmm_t(lp.fresh, da[:, f:])
            dh[lp.self_idx] += da[:, :f]
        else:
            dh = spmm_t(lp.fresh, da)
        dz = dh * (tape.pre[ell - 2] > 0)
    return GradBundle(grads)


def per_sample_grad_norms(tape: ForwardTape, dZ_L_raw, mode="last_preactivation") -> np.ndarray:
    """Per-row gradient-norm proxies reusing stored forward/backward products.

    ``last_preactivation``: ||dphi/dZ^(L)_i||. ``last_layer_weight``: the
    Frobenius norm of the rank-one gradient A_i^T dZ_i, i.e. ||A_i|| ||dZ_i||.
    """
    d = np.asarray(dZ_L_raw, dtype=np.float64)
    if d.shape != tape.logits.shape:
        raise DimensionMismatch("dZ shape mismatch")
    dn = np.linalg.norm(d, axis=1)
    if mode == "last_preactivation":
        return dn
    if mode == "last_layer_weight":
        return np.linalg.norm(tape.aggregates[-1], axis=1) * dn
    raise ValueError(f"unknown mode {mode!r}")


def per_sample_last_grads(tape: ForwardTape, dZ_L: np.ndarray) -> np.ndarray:
    """Stack of per-row outer products A_i^T dZ_i, shape (B, F_in, F_out)."""
    return np.einsum("bi,bo->bio", tape.aggregates[-1], dZ_L)


def full_gradient_oracle(params: ModelParams, dataset: GraphDataset, L: SparseMatrix,
                         mode: LossMode, ids=None) -> GradBundle:
    """Exact mean-loss gradient over the training nodes (or ``ids``)."""
    ids = dataset.train_ids if ids is None else np.asarray(ids)
    plan = full_plan(L, ids, params.n_layers)
    tape = forward(params, plan, dataset.features)
    loss, dz = loss_and_output_grad(tape, dataset.labels[plan.batch_nodes], mode)
    gb = backward(params, tape, dz)
    gb.loss = loss
    return gb


def exact_embeddings(params: ModelParams, features: np.ndarray, L: SparseMatrix) -> list:
    """Full-graph pre-activations and activations, one pair per layer."""
    h = np.asarray(features, dtype=np.float64)
    out = []
    for ell, W in enumerate(params.weights, start=1):
        agg = spmm(L, h)
        a = np.hstack([h, agg]) if params.aggregation == "concat" else agg
        z = a @ W
        h = relu(z) if ell < params.n_layers else z
        out.append((z, h))
    return out


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(w) for w in params.weights],
            0, lr, beta1, beta2, eps,
        )


def adam_step(params: ModelParams, grads: GradBundle, state: AdamState):
    if len(grads.grads) != params.n_layers:
        raise DimensionMismatch("gradient bundle does not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(params.weights, grads.grads, state.m, state.v):
        if g.shape != w.shape:
            raise DimensionMismatch("gradient shape mismatch")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        new_w.append(w - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    st = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return params.with_weights(new_w), st
