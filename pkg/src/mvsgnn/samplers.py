"""Mini-batch plan construction for every sampling strategy.

A plan lists, for each GCN layer from the input side up, the output node
ids (``rows``), the fresh input node ids (``cols``, i.e. the rows of the
layer below) and the sparse operator linking them. MVS plans may also carry
a stale operator whose columns are read from the history store.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence

import numpy as np

from . import solver
from .errors import BatchTooLarge, EmptyBatch, EmptyCandidateSet, StaleCache
from .graph import SparseMatrix, _from_coo, neighbors, restrict

MAX_BERNOULLI_RETRIES = 16


def make_rng(seed, *stream) -> np.random.Generator:
    """Counter-based substream: (root seed, stream ids...)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng([int(seed), *map(int, stream)])


@dataclass(frozen=True, eq=False)
class LayerPlan:
    rows: np.ndarray
    cols: np.ndarray
    fresh: SparseMatrix
    stale_cols: Optional[np.ndarray] = None
    stale: Optional[SparseMatrix] = None

    @property
    def self_idx(self) -> np.ndarray:
        """Position of every row id inside ``cols`` (-1 when absent)."""
        if self.cols.size == 0:
            return np.full(self.rows.size, -1)
        pos = np.minimum(np.searchsorted(self.cols, self.rows), self.cols.size - 1)
        return np.where(self.cols[pos] == self.rows, pos, -1)

    @property
    def has_stale(self) -> bool:
        return self.stale is not None and self.stale_cols is not None and self.stale_cols.size > 0


@dataclass(frozen=True, eq=False)
class MiniBatchPlan:
    layers: list
    inclusion_probs: np.ndarray
    weights: np.ndarray
    norm: float
    strategy: str

    @property
    def batch_nodes(self) -> np.ndarray:
        return self.layers[-1].rows

    @property
    def input_nodes(self) -> np.ndarray:
        return self.layers[0].cols

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def has_stale(self) -> bool:
        return any(lp.has_stale for lp in self.layers)

    def check(self) -> None:
        for lo, hi in zip(self.layers[:-1], self.layers[1:]):
            assert np.array_equal(lo.rows, hi.cols)
        for lp in self.layers:
            assert lp.fresh.shape == (lp.rows.size, lp.cols.size)
            assert np.all(np.diff(lp.cols) > 0)
            if lp.has_stale:
                assert lp.stale.shape == (lp.rows.size, lp.stale_cols.size)
                assert np.intersect1d(lp.cols, lp.stale_cols).size == 0
        assert self.batch_nodes.size >= 1
        assert np.all((self.inclusion_probs > 0) & (self.inclusion_probs <= 1))


def _union(a, b) -> np.ndarray:
    return np.union1d(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))


def _default_weights(batch, probs, norm=None):
    return np.ones(batch.size), float(batch.size if norm is None else norm)


def exact_layers(L: SparseMatrix, batch, depth: int) -> list:
    """Full-neighbourhood layers: every row keeps all of its neighbours."""
    layers = []
    rows = np.unique(np.asarray(batch, dtype=np.int64))
    for _ in range(depth):
        cols = _union(rows, neighbors(L, rows))
        fresh, _, _ = restrict(L, rows, cols)
        layers.append(LayerPlan(rows, cols, fresh))
        rows = cols
    return layers[::-1]


def exact_plan(L: SparseMatrix, batch, depth: int, probs=None, weights=None, norm=None,
               strategy="exact") -> MiniBatchPlan:
    batch = np.unique(np.asarray(batch, dtype=np.int64))
    probs = np.ones(batch.size) if probs is None else np.asarray(probs, dtype=np.float64)
    w, nrm = _default_weights(batch, probs, norm)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
    return MiniBatchPlan(exact_layers(L, batch, depth), probs, w, nrm, strategy)


def full_plan(L: SparseMatrix, output_ids, depth: int) -> MiniBatchPlan:
    """All nodes at every inner layer, ``output_ids`` at the top."""
    n = L.n_rows
    allv = np.arange(n)
    out = np.unique(np.asarray(output_ids, dtype=np.int64))
    layers = [LayerPlan(allv, allv, L) for _ in range(depth - 1)]
    top, _, _ = restrict(L, out, allv)
    layers.append(LayerPlan(out, allv, top))
    return MiniBatchPlan(layers, np.ones(out.size), np.ones(out.size), float(out.size), "full")


def uniform_batch(L: SparseMatrix, candidates, B: int, depth: int, seed) -> MiniBatchPlan:
    """B distinct candidates uniformly without replacement; exact-inference plan."""
    cand = np.asarray(candidates, dtype=np.int64)
    n = cand.size
    if not 1 <= B <= n:
        raise BatchTooLarge(f"batch size {B} not in [1, {n}]")
    rng = make_rng(seed)
    batch = np.sort(rng.choice(cand, size=B, replace=False))
    probs = np.full(B, B / n)
    return exact_plan(L, batch, depth, probs, strategy="uniform")


def uniform_ids(candidates, B: int, seed) -> np.ndarray:
    cand = np.asarray(candidates, dtype=np.int64)
    if not 1 <= B <= cand.size:
        raise BatchTooLarge(f"batch size {B} not in [1, {cand.size}]")
    return np.sort(make_rng(seed).choice(cand, size=B, replace=False))


def node_wise_plan(L: SparseMatrix, batch, s: int, depth: int, seed) -> MiniBatchPlan:
    """Recursive per-node neighbour sampling, s neighbours per row, scaled by deg/s."""
    if s < 1:
        raise ValueError("s must be >= 1")
    rng = make_rng(seed)
    rows = np.unique(np.asarray(batch, dtype=np.int64))
    out_batch = rows
    layers = []
    for _ in range(depth):
        lo, hi = L.row_ptr[rows], L.row_ptr[rows + 1]
        deg = hi - lo
        local_row = np.repeat(np.arange(rows.size), deg)
        # flat positions of every candidate entry in L's CSR arrays
        offs = np.arange(deg.sum()) - np.repeat(np.cumsum(deg) - deg, deg)
        flat = np.repeat(lo, deg) + offs
        keys = rng.random(flat.size)
        order = np.lexsort((keys, local_row))
        rank = np.empty(flat.size, dtype=np.int64)
        rank[order] = offs  # rows are contiguous, so sorted position minus row start
        take = rank < s
        scale = np.where(deg > s, deg / s, 1.0)
        sel_rows = local_row[take]
        sel_cols = L.col_idx[flat[take]]
        sel_vals = L.values[flat[take]] * scale[sel_rows]
        cols = _union(rows, sel_cols)
        fresh = _from_coo(sel_rows, np.searchsorted(cols, sel_cols), sel_vals, rows.size, cols.size, False)
        layers.append(LayerPlan(rows, cols, fresh))
        rows = cols
    probs = np.ones(out_batch.size)
    return MiniBatchPlan(layers[::-1], probs, np.ones(out_batch.size), float(out_batch.size), "node_wise")


def column_degree(L: SparseMatrix) -> np.ndarray:
    return np.bincount(L.col_idx, minlength=L.n_cols).astype(np.float64)


def layer_wise_plan(
    L: SparseMatrix,
    batch,
    layer_sizes: Sequence[int],
    dist: Literal["uniform", "degree"] = "uniform",
    seed=0,
) -> MiniBatchPlan:
    """LADIES-style: i.i.d. draws from the union of the upper layer's neighbourhoods.

    ``layer_sizes`` is ordered from the output layer downwards.
    """
    if any(s < 1 for s in layer_sizes):
        raise ValueError("layer sizes must be positive")
    rng = make_rng(seed)
    rows = np.unique(np.asarray(batch, dtype=np.int64))
    out_batch = rows
    degree = column_degree(L) if dist == "degree" else None
    layers = []
    for s in layer_sizes:
        cand = neighbors(L, rows)
        if cand.size == 0:
            raise EmptyCandidateSet("no neighbours to sample from")
        if dist == "uniform":
            q = np.full(cand.size, 1.0 / cand.size)
        elif dist == "degree":
            q = degree[cand] / degree[cand].sum()
        else:
            raise ValueError(f"unknown dist {dist!r}")
        draws = rng.choice(cand.size, size=s, replace=True, p=q)
        counts = np.bincount(draws, minlength=cand.size)
        picked = counts > 0
        factor = np.zeros(L.n_cols)
        factor[cand[picked]] = counts[picked] / (s * q[picked])
        cols = _union(rows, cand[picked])
        fresh, _, _ = restrict(L, rows, cols, scale=lambda r, c, v: v * factor[c])
        layers.append(LayerPlan(rows, cols, fresh))
        rows = cols
    probs = np.ones(out_batch.size)
    return MiniBatchPlan(layers[::-1], probs, np.ones(out_batch.size), float(out_batch.size), "layer_wise")


def subgraph_plan(L: SparseMatrix, batch, depth: int) -> MiniBatchPlan:
    """Induced batch x batch restriction of raw L shared by every layer."""
    b = np.unique(np.asarray(batch, dtype=np.int64))
    if b.size == 0:
        raise EmptyBatch("empty batch")
    sub, _, _ = restrict(L, b, b)
    layers = [LayerPlan(b, b, sub) for _ in range(depth)]
    return MiniBatchPlan(layers, np.ones(b.size), np.ones(b.size), float(b.size), "subgraph")


def history_plan(L: SparseMatrix, batch, depth: int) -> list:
    """Fresh columns = batch (raw L), stale columns = remaining neighbours."""
    b = np.unique(np.asarray(batch, dtype=np.int64))
    fresh, _, _ = restrict(L, b, b)
    stale_cols = np.setdiff1d(neighbors(L, b), b)
    stale, _, _ = restrict(L, b, stale_cols)
    return [LayerPlan(b, b, fresh, stale_cols, stale) for _ in range(depth)]


# ---------------------------------------------------------------- MVS


@dataclass
class CheckpointState:
    gamma: float
    K: int
    checkpoint_nodes: Optional[np.ndarray] = None
    grad_norm_cache: Optional[np.ndarray] = None
    freshness: Optional[np.ndarray] = None
    k: int = 0
    step: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def fill_cache(self, g_bar, step: int) -> None:
        g = np.asarray(g_bar, dtype=np.float64)
        if g.shape != self.checkpoint_nodes.shape:
            raise ValueError("gradient cache must cover the checkpoint nodes")
        if np.any(g < 0):
            raise ValueError("gradient norms must be nonnegative")
        self.grad_norm_cache = g.copy()
        self.freshness = np.full(g.size, step, dtype=np.int64)

    @property
    def due(self) -> bool:
        """True when the next iteration is a checkpoint."""
        return self.checkpoint_nodes is None or self.k >= self.K


def checkpoint_size(n: int, gamma: float) -> int:
    return int(min(max(round(n * gamma), 1), n))


def mvs_checkpoint(L: SparseMatrix, train_ids, depth: int, state: CheckpointState, seed):
    """Uniform large batch V_S of size round(N*gamma) with an exact-inference plan.

    The caller refreshes history from the resulting tape and fills the cache.
    """
    cand = np.asarray(train_ids, dtype=np.int64)
    size = checkpoint_size(cand.size, state.gamma)
    vs = np.sort(make_rng(seed).choice(cand, size=size, replace=False))
    plan = exact_plan(L, vs, depth, probs=np.full(size, state.gamma), strategy="mvs_checkpoint")
    new = replace(state, checkpoint_nodes=vs, grad_norm_cache=None, freshness=None, k=1)
    return plan, new


def bernoulli_draw(probs, seed, stream=0) -> np.ndarray:
    """Independent Bernoulli(p_i) inclusion mask, retried on an empty draw."""
    p = np.asarray(probs, dtype=np.float64)
    for attempt in range(MAX_BERNOULLI_RETRIES + 1):
        rng = make_rng(seed, stream, attempt) if not isinstance(seed, np.random.Generator) else seed
        mask = rng.random(p.size) < p
        if mask.any():
            return mask
    raise EmptyBatch(f"all Bernoulli draws empty after {MAX_BERNOULLI_RETRIES} retries")


def importance_plan(L: SparseMatrix, candidates, probs, B: float, depth: int,
                    exact_inference: bool, seed, strategy="mvs") -> MiniBatchPlan:
    """Bernoulli batch over ``candidates`` with loss weights B / (|cand| p_i)."""
    cand = np.asarray(candidates, dtype=np.int64)
    p = np.asarray(probs, dtype=np.float64)
    mask = bernoulli_draw(p, seed)
    order = np.argsort(cand[mask], kind="stable")
    batch = cand[mask][order]
    pb = p[mask][order]
    w = B / (cand.size * pb)
    if exact_inference:
        layers = exact_layers(L, batch, depth)
    else:
        layers = history_plan(L, batch, depth)
    return MiniBatchPlan(layers, pb, w, float(B), strategy)


def mvs_minibatch(state: CheckpointState, L: SparseMatrix, B: int, depth: int,
                  exact_inference: bool, seed) -> MiniBatchPlan:
    if state.grad_norm_cache is None or state.checkpoint_nodes is None:
        raise StaleCache("gradient-norm cache was never filled")
    pv = solver.optimal_probs(state.grad_norm_cache, B)
    return importance_plan(L, state.checkpoint_nodes, pv.probs, B, depth, exact_inference, seed)
