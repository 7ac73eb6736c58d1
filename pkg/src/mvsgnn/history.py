"""Stale per-layer embeddings and the fresh + stale aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CoverageGap, DimensionMismatch, MissingHistory
from .graph import SparseMatrix, spmm


@dataclass(eq=False)
class HistoryStore:
    """H-bar^(l) for hidden layers l = 1..L-1 plus the (exact) input features.

    ``tables[l - 1]`` holds layer l; ``freshness[i]`` is the last step at
    which node i was written (all layers are written together). Nodes never
    written carry freshness -1.
    """

    features: np.ndarray
    tables: list
    freshness: np.ndarray
    init_mode: str = "zeros"

    @classmethod
    def empty(cls, features, dims, init_mode="zeros") -> "HistoryStore":
        """``dims`` are the hidden widths (F1, ..., F_{L-1})."""
        x = np.asarray(features, dtype=np.float64)
        n = x.shape[0]
        return cls(x, [np.zeros((n, f)) for f in dims], np.full(n, -1, dtype=np.int64), init_mode)

    @classmethod
    def from_full_forward(cls, params, features, L) -> "HistoryStore":
        from .gcn import exact_embeddings

        emb = exact_embeddings(params, features, L)
        x = np.asarray(features, dtype=np.float64)
        tables = [h.copy() for _, h in emb[:-1]]
        return cls(x, tables, np.zeros(x.shape[0], dtype=np.int64), "full_forward")

    @property
    def n_layers(self) -> int:
        return len(self.tables)

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tables)

    def layer(self, ell: int) -> np.ndarray:
        """H-bar^(ell); layer 0 is the exact feature matrix."""
        if ell == 0:
            return self.features
        return self.tables[ell - 1]

    def clone(self) -> "HistoryStore":
        return HistoryStore(self.features, [t.copy() for t in self.tables], self.freshness.copy(), self.init_mode)


def refresh_from_tape(store: HistoryStore, tape, step: int) -> HistoryStore:
    """Overwrite the rows computed in ``tape`` at every hidden layer (in place)."""
    n_hidden = store.n_layers
    if len(tape.acts) - 1 != n_hidden:
        raise DimensionMismatch("tape depth does not match history layers")
    touched = []
    for ell in range(1, n_hidden + 1):
        rows = tape.plan.layers[ell - 1].rows
        h = tape.acts[ell - 1]
        tab = store.tables[ell - 1]
        if h.shape != (rows.size, tab.shape[1]):
            raise DimensionMismatch(f"layer {ell}: tape rows do not fit the store")
        tab[rows] = h
        touched.append(rows)
    if touched:
        store.freshness[np.unique(np.concatenate(touched))] = step
    return store


def check_coverage(L: SparseMatrix, rows, fresh_cols, stale_cols) -> None:
    covered = np.union1d(fresh_cols, stale_cols if stale_cols is not None else [])
    for r in np.asarray(rows):
        support = L.col_idx[L.row_ptr[r] : L.row_ptr[r + 1]]
        miss = np.setdiff1d(support, covered)
        if miss.size:
            raise CoverageGap(f"row {r}: neighbour {miss[0]} is in neither fresh nor stale columns")


def combined_aggregate(L_fresh: SparseMatrix, H_fresh, L_stale: Optional[SparseMatrix], stale_cols,
                       store: Optional[HistoryStore], layer: int, features=None) -> np.ndarray:
    """L_fresh @ H_fresh + L_stale @ H-bar^(layer-1)[stale_cols]."""
    out = spmm(L_fresh, H_fresh)
    if L_stale is None or stale_cols is None or len(stale_cols) == 0:
        return out
    if layer == 1:
        src = store.features if store is not None else features
        if src is None:
            raise MissingHistory("layer 1 stale part needs the feature matrix")
    else:
        if store is None:
            raise MissingHistory(f"layer {layer} needs history")
        src = store.layer(layer - 1)
    return out + spmm(L_stale, src[np.asarray(stale_cols)])


@dataclass(frozen=True)
class StalenessReport:
    max_staleness: int
    mean_staleness: float
    per_layer_delta: np.ndarray


def staleness_report(store: HistoryStore, step: int, params=None, exact=None) -> StalenessReport:
    """Staleness summary; with ``params`` and exact hidden activations also delta-gamma.

    ``per_layer_delta[k]`` = max_i ||(H^(k+1) - H-bar^(k+1))_i W^(k+2)||, i.e. the
    history error entering convolution layer k+2 (only the aggregation half of
    a concat weight sees history).
    """
    written = store.freshness >= 0
    age = np.where(written, step - store.freshness, step + 1)
    deltas = np.zeros(store.n_layers)
    if params is not None and exact is not None:
        for k in range(store.n_layers):
            W = params.weights[k + 1]
            if params.aggregation == "concat":
                W = W[W.shape[0] // 2 :]
            diff = (exact[k] - store.tables[k]) @ W
            deltas[k] = float(np.linalg.norm(diff, axis=1).max()) if diff.size else 0.0
    return StalenessReport(int(age.max()) if age.size else 0, float(age.mean()) if age.size else 0.0, deltas)
